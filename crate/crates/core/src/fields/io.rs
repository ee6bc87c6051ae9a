//! Binary field dumps (`WCLF`) and CSV export.
//!
//! Dump layout, all little-endian: magic `WCLF`, version `u16`, then `d`, `N`
//! and `ell` as `u32`, then the samples as `f64`, point-major with the channel
//! index fastest.

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{PeriodicField, PeriodicGrid};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"WCLF";
pub const DUMP_VERSION: u16 = 1;

pub fn write_dump(field: &PeriodicField, mut out: impl Write) -> Result<()> {
    let grid = field.grid();
    let mut buf = Vec::with_capacity(18 + field.values().len() * 8);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    for x in [grid.dim(), grid.n(), field.channels()] {
        buf.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_dump(mut input: impl Read) -> Result<PeriodicField> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 18 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Format("missing WCLF header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (d, n, ell) = (word(6), word(10), word(14));
    let grid = PeriodicGrid::new(d, n)?;
    let body = &bytes[18..];
    let expected = grid.len() * ell * 8;
    if body.len() != expected {
        return Err(Error::Format(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    PeriodicField::new(grid, ell, values)
}

/// CSV with columns `i0..i{d-1}, c0..c{ell-1}`, header row, LF endings.
pub fn field_to_csv(field: &PeriodicField) -> String {
    let grid = field.grid();
    let mut out = String::new();
    let header: Vec<String> = (0..grid.dim())
        .map(|a| format!("i{a}"))
        .chain((0..field.channels()).map(|c| format!("c{c}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (idx, s) in field.samples().enumerate() {
        let coords: Vec<String> = grid.coords(idx).iter().map(|i| i.to_string()).collect();
        let vals: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{},{}", coords.join(","), vals.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dump_round_trips(values in prop::collection::vec(-1e300f64..1e300, 2 * 25)) {
            let grid = PeriodicGrid::new(2, 5).unwrap();
            let field = PeriodicField::new(grid, 2, values).unwrap();
            let mut buf = Vec::new();
            write_dump(&field, &mut buf).unwrap();
            prop_assert_eq!(buf.len(), 18 + 50 * 8);
            prop_assert_eq!(read_dump(buf.as_slice()).unwrap(), field);
        }
    }

    #[test]
    fn header_layout() {
        let grid = PeriodicGrid::new(1, 3).unwrap();
        let field = PeriodicField::new(grid, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_dump(&field, &mut buf).unwrap();
        assert_eq!(&buf[..6], b"WCLF\x01\x00");
        assert_eq!(&buf[6..18], &[1, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[18..26], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_dumps() {
        assert!(read_dump(&b"XXXX"[..]).is_err());
        let grid = PeriodicGrid::new(1, 3).unwrap();
        let mut buf = Vec::new();
        write_dump(&PeriodicField::zeros(grid, 1), &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_dump(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn csv_shape() {
        let grid = PeriodicGrid::new(2, 3).unwrap();
        let csv = field_to_csv(&PeriodicField::constant(grid, &[0.5, -1.0]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i0,i1,c0,c1");
        assert_eq!(lines[1], "0,0,5e-1,-1e0");
        assert_eq!(lines.len(), 10);
    }
}
