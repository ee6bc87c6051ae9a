//! Line-oriented operator description files.
//!
//! ```text
//! # 2D divergence of 2x2 matrix fields
//! op d=2 ell=4 n=2
//! term alpha=1,0 matrix=1,0,0,0;0,0,1,0
//! term alpha=0,1 matrix=0,1,0,0;0,0,0,1
//! ```
//!
//! `#` starts a comment. Whitespace around `=`, `,` and `;` is ignored. The
//! header may carry an optional `name=<label>` token.

use nalgebra::DMatrix;

use super::{DifferentialOperator, MultiIndex};
use crate::error::{Error, Result};

fn is_sep(c: char) -> bool {
    matches!(c, '=' | ',' | ';')
}

// Drops whitespace next to separators and collapses the remaining runs.
fn tighten(line: &str) -> String {
    let chars: Vec<char> = line.trim().chars().collect();
    let mut out = String::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            let mut j = i;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let prev_sep = out.chars().last().is_some_and(is_sep);
            let next_sep = chars.get(j).copied().is_some_and(is_sep);
            if !prev_sep && !next_sep {
                out.push(' ');
            }
            i = j;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn key_values(line_no: usize, tokens: &[&str]) -> Result<Vec<(String, String)>> {
    tokens
        .iter()
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| parse_err(line_no, format!("expected key=value, found '{t}'")))
        })
        .collect()
}

fn parse_usize(line_no: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| parse_err(line_no, format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_f64(line_no: usize, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| parse_err(line_no, format!("'{v}' is not a decimal number")))?;
    if !x.is_finite() {
        return Err(parse_err(line_no, format!("'{v}' is not finite")));
    }
    Ok(x)
}

/// Parses an operator description; `k` is inferred as the largest term order.
pub fn parse_operator(text: &str) -> Result<DifferentialOperator> {
    let mut header: Option<(usize, usize, usize, Option<String>)> = None;
    let mut terms: Vec<(MultiIndex, DMatrix<f64>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let line = tighten(content);
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(' ').collect();
        match tokens[0] {
            "op" => {
                if header.is_some() {
                    return Err(parse_err(line_no, "duplicate 'op' header"));
                }
                let (mut d, mut ell, mut n, mut name) = (None, None, None, None);
                for (k, v) in key_values(line_no, &tokens[1..])? {
                    match k.as_str() {
                        "d" => d = Some(parse_usize(line_no, "d", &v)?),
                        "ell" => ell = Some(parse_usize(line_no, "ell", &v)?),
                        "n" => n = Some(parse_usize(line_no, "n", &v)?),
                        "name" if !v.is_empty() => name = Some(v),
                        other => return Err(parse_err(line_no, format!("unknown header key '{other}'"))),
                    }
                }
                match (d, ell, n) {
                    (Some(d), Some(ell), Some(n)) => header = Some((d, ell, n, name)),
                    _ => return Err(parse_err(line_no, "header needs d=, ell= and n=")),
                }
            }
            "term" => {
                let Some((d, ell, n, _)) = header.as_ref() else {
                    return Err(parse_err(line_no, "'term' before 'op' header"));
                };
                let (mut alpha, mut matrix) = (None, None);
                for (k, v) in key_values(line_no, &tokens[1..])? {
                    match k.as_str() {
                        "alpha" => {
                            let entries = v
                                .split(',')
                                .map(|a| {
                                    a.parse::<u32>().map_err(|_| {
                                        parse_err(line_no, format!("alpha entry '{a}' is not a non-negative integer"))
                                    })
                                })
                                .collect::<Result<Vec<u32>>>()?;
                            if entries.len() != *d {
                                return Err(parse_err(
                                    line_no,
                                    format!("alpha has {} entries, expected d={d}", entries.len()),
                                ));
                            }
                            alpha = Some(MultiIndex::new(entries)?);
                        }
                        "matrix" => {
                            let rows = v
                                .split(';')
                                .map(|r| r.split(',').map(|x| parse_f64(line_no, x)).collect::<Result<Vec<f64>>>())
                                .collect::<Result<Vec<Vec<f64>>>>()?;
                            if rows.len() != *n {
                                return Err(Error::ShapeMismatch(format!(
                                    "line {line_no}: matrix has {} rows, expected n={n}",
                                    rows.len()
                                )));
                            }
                            if let Some(r) = rows.iter().find(|r| r.len() != *ell) {
                                return Err(Error::ShapeMismatch(format!(
                                    "line {line_no}: matrix row has {} entries, expected ell={ell}",
                                    r.len()
                                )));
                            }
                            let flat: Vec<f64> = rows.into_iter().flatten().collect();
                            matrix = Some(DMatrix::from_row_slice(*n, *ell, &flat));
                        }
                        other => return Err(parse_err(line_no, format!("unknown term key '{other}'"))),
                    }
                }
                match (alpha, matrix) {
                    (Some(a), Some(m)) => {
                        if terms.iter().any(|(b, _)| *b == a) {
                            return Err(parse_err(line_no, format!("duplicate term {a}")));
                        }
                        terms.push((a, m));
                    }
                    _ => return Err(parse_err(line_no, "term needs alpha= and matrix=")),
                }
            }
            other => return Err(parse_err(line_no, format!("unknown directive '{other}'"))),
        }
    }

    let (d, ell, n, name) = header.ok_or_else(|| parse_err(0, "missing 'op' header"))?;
    DifferentialOperator::new(d, ell, n, terms, name)
}

fn render_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Canonical text form: terms sorted by `alpha`, 17 significant digits.
pub fn render_operator(op: &DifferentialOperator) -> String {
    let mut out = format!("op d={} ell={} n={}", op.dim(), op.channels(), op.equations());
    if let Some(name) = op.name().filter(|s| !s.is_empty() && !s.contains(char::is_whitespace) && !s.contains('#')) {
        out.push_str(&format!(" name={name}"));
    }
    out.push('\n');
    for (alpha, m) in op.terms() {
        let a: Vec<String> = alpha.entries().iter().map(|x| x.to_string()).collect();
        let rows: Vec<String> = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| render_number(m[(r, c)])).collect::<Vec<_>>().join(","))
            .collect();
        out.push_str(&format!("term alpha={} matrix={}\n", a.join(","), rows.join(";")));
    }
    out
}
