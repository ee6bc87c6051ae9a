//! Built-in operators: `curl` and `div` of `m x d` matrix fields, and the
//! Saint-Venant `curlcurl` operator on symmetric `d x d` fields.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{DifferentialOperator, MultiIndex};
use crate::error::{Error, Result};

pub const CATALOG_NAMES: [&str; 3] = ["curl", "div", "curlcurl"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CatalogEntry {
    /// Row-wise curl of an `rows x dim` matrix field.
    Curl { rows: usize, dim: usize },
    /// Row-wise divergence of an `rows x dim` matrix field.
    Div { rows: usize, dim: usize },
    /// Incompatibility operator on symmetric `dim x dim` fields, `dim` in {2, 3}.
    CurlCurl { dim: usize },
}

impl CatalogEntry {
    pub fn label(&self) -> String {
        match *self {
            CatalogEntry::Curl { rows, dim } => format!("curl:{rows}x{dim}"),
            CatalogEntry::Div { rows, dim } => format!("div:{rows}x{dim}"),
            CatalogEntry::CurlCurl { dim } => format!("curlcurl:{dim}"),
        }
    }
}

/// Parses `curl:MxD`, `div:MxD` or `curlcurl:D`.
pub fn parse_catalog_name(s: &str) -> Result<CatalogEntry> {
    let bad = || Error::InvalidArgument(format!("unknown catalog entry '{s}' (expected curl:MxD, div:MxD or curlcurl:D)"));
    let (name, dims) = s.trim().split_once(':').ok_or_else(bad)?;
    let parse_md = |dims: &str| -> Result<(usize, usize)> {
        let (m, d) = dims.split_once('x').ok_or_else(bad)?;
        Ok((m.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?))
    };
    match name.trim() {
        "curl" => parse_md(dims).map(|(rows, dim)| CatalogEntry::Curl { rows, dim }),
        "div" => parse_md(dims).map(|(rows, dim)| CatalogEntry::Div { rows, dim }),
        "curlcurl" => Ok(CatalogEntry::CurlCurl { dim: dims.trim().parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

/// Channel of `S_ab` in the packed upper-triangular layout.
pub fn sym_channel(dim: usize, a: usize, b: usize) -> usize {
    let (i, j) = if a <= b { (a, b) } else { (b, a) };
    // rows r < i hold dim - r entries each
    i * dim - i * i.saturating_sub(1) / 2 + (j - i)
}

pub fn catalog(entry: CatalogEntry) -> Result<DifferentialOperator> {
    let unsupported = |msg: &str| Err(Error::InvalidArgument(format!("{}: {msg}", entry.label())));
    match entry {
        CatalogEntry::Curl { rows, dim } => {
            if rows == 0 || dim < 2 {
                return unsupported("curl needs rows >= 1 and d >= 2");
            }
            curl(rows, dim)
        }
        CatalogEntry::Div { rows, dim } => {
            if rows == 0 || dim == 0 {
                return unsupported("div needs rows >= 1 and d >= 1");
            }
            div(rows, dim)
        }
        CatalogEntry::CurlCurl { dim } => {
            if dim != 2 && dim != 3 {
                return unsupported("curlcurl is available for d = 2 and d = 3");
            }
            curlcurl(dim)
        }
    }
    .map(|op| op.with_name(entry.label()))
}

fn assemble(
    dim: usize,
    channels: usize,
    equations: usize,
    coeffs: BTreeMap<MultiIndex, DMatrix<f64>>,
) -> Result<DifferentialOperator> {
    let terms = coeffs.into_iter().filter(|(_, m)| m.iter().any(|&x| x != 0.0));
    DifferentialOperator::new(dim, channels, equations, terms, None)
}

// equation (i, j<l): d_l v_ij - d_j v_il
fn curl(rows: usize, dim: usize) -> Result<DifferentialOperator> {
    let pairs: Vec<(usize, usize)> =
        (0..dim).flat_map(|j| (j + 1..dim).map(move |l| (j, l))).collect();
    let channels = rows * dim;
    let equations = rows * pairs.len();
    let mut coeffs: BTreeMap<MultiIndex, DMatrix<f64>> = BTreeMap::new();
    for i in 0..rows {
        for (p, &(j, l)) in pairs.iter().enumerate() {
            let eq = i * pairs.len() + p;
            coeffs
                .entry(MultiIndex::from_axes(dim, &[l]))
                .or_insert_with(|| DMatrix::zeros(equations, channels))[(eq, i * dim + j)] += 1.0;
            coeffs
                .entry(MultiIndex::from_axes(dim, &[j]))
                .or_insert_with(|| DMatrix::zeros(equations, channels))[(eq, i * dim + l)] -= 1.0;
        }
    }
    assemble(dim, channels, equations, coeffs)
}

fn div(rows: usize, dim: usize) -> Result<DifferentialOperator> {
    let channels = rows * dim;
    let mut coeffs: BTreeMap<MultiIndex, DMatrix<f64>> = BTreeMap::new();
    for i in 0..rows {
        for j in 0..dim {
            coeffs
                .entry(MultiIndex::from_axes(dim, &[j]))
                .or_insert_with(|| DMatrix::zeros(rows, channels))[(i, i * dim + j)] += 1.0;
        }
    }
    assemble(dim, channels, rows, coeffs)
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

// (inc S)_ij = eps_ikl eps_jmn d_k d_m S_ln. In 2D only the (3,3) entry survives:
// d22 S11 - 2 d12 S12 + d11 S22.
fn curlcurl(dim: usize) -> Result<DifferentialOperator> {
    let channels = dim * (dim + 1) / 2;
    let rows: Vec<(usize, usize)> = if dim == 2 {
        vec![(2, 2)]
    } else {
        (0..3).flat_map(|i| (i..3).map(move |j| (i, j))).collect()
    };
    let equations = rows.len();
    let mut coeffs: BTreeMap<MultiIndex, DMatrix<f64>> = BTreeMap::new();
    for (eq, &(i, j)) in rows.iter().enumerate() {
        for k in 0..dim {
            for l in 0..dim {
                for m in 0..dim {
                    for n in 0..dim {
                        let c = levi_civita(i, k, l) * levi_civita(j, m, n);
                        if c == 0.0 {
                            continue;
                        }
                        coeffs
                            .entry(MultiIndex::from_axes(dim, &[k, m]))
                            .or_insert_with(|| DMatrix::zeros(equations, channels))
                            [(eq, sym_channel(dim, l, n))] += c;
                    }
                }
            }
        }
    }
    assemble(dim, channels, equations, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_layout() {
        assert_eq!([sym_channel(2, 0, 0), sym_channel(2, 0, 1), sym_channel(2, 1, 1)], [0, 1, 2]);
        let got: Vec<usize> = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
            .iter()
            .map(|&(a, b)| sym_channel(3, a, b))
            .collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(sym_channel(3, 2, 1), 4);
    }

    #[test]
    fn curl_2x2_layout() {
        let op = catalog(CatalogEntry::Curl { rows: 2, dim: 2 }).unwrap();
        assert_eq!((op.order(), op.channels(), op.equations()), (1, 4, 2));
        let d1 = op.term(&MultiIndex::new(vec![1, 0]).unwrap()).unwrap();
        let d2 = op.term(&MultiIndex::new(vec![0, 1]).unwrap()).unwrap();
        // row 0: d2 v11 - d1 v12
        assert_eq!(d2.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d1.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, -1.0, 0.0, 0.0]);
        assert_eq!(d2.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(d1.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, -1.0]);
        assert!(op.is_homogeneous());
    }

    #[test]
    fn div_2x2_layout() {
        let op = catalog(CatalogEntry::Div { rows: 2, dim: 2 }).unwrap();
        assert_eq!((op.order(), op.channels(), op.equations()), (1, 4, 2));
        let d1 = op.term(&MultiIndex::new(vec![1, 0]).unwrap()).unwrap();
        let d2 = op.term(&MultiIndex::new(vec![0, 1]).unwrap()).unwrap();
        assert_eq!(d1, &DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert_eq!(d2, &DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn curlcurl_2d_matches_saint_venant() {
        let op = catalog(CatalogEntry::CurlCurl { dim: 2 }).unwrap();
        assert_eq!((op.order(), op.channels(), op.equations()), (2, 3, 1));
        let t = |a: Vec<u32>| op.term(&MultiIndex::new(a).unwrap()).unwrap().clone();
        assert_eq!(t(vec![0, 2]), DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
        assert_eq!(t(vec![1, 1]), DMatrix::from_row_slice(1, 3, &[0.0, -2.0, 0.0]));
        assert_eq!(t(vec![2, 0]), DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]));
    }

    #[test]
    fn curlcurl_3d_shape() {
        let op = catalog(CatalogEntry::CurlCurl { dim: 3 }).unwrap();
        assert_eq!((op.order(), op.channels(), op.equations()), (2, 6, 6));
        assert!(op.is_homogeneous());
    }

    #[test]
    fn names_and_errors() {
        assert_eq!(parse_catalog_name("curl:2x2").unwrap(), CatalogEntry::Curl { rows: 2, dim: 2 });
        assert_eq!(parse_catalog_name(" div:3x2 ").unwrap(), CatalogEntry::Div { rows: 3, dim: 2 });
        assert_eq!(parse_catalog_name("curlcurl:3").unwrap(), CatalogEntry::CurlCurl { dim: 3 });
        assert!(parse_catalog_name("grad:2x2").is_err());
        assert!(parse_catalog_name("curl:2").is_err());
        assert!(catalog(CatalogEntry::CurlCurl { dim: 4 }).is_err());
        assert!(catalog(CatalogEntry::Curl { rows: 1, dim: 1 }).is_err());
        assert_eq!(catalog(CatalogEntry::Div { rows: 2, dim: 2 }).unwrap().name(), Some("div:2x2"));
    }
}
