//! Constant-coefficient linear differential operators
//! `A v = sum_alpha A_alpha d^alpha v` acting on `R^ell`-valued fields in
//! `d` space dimensions, with `n` equations.

mod catalog;
mod format;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use catalog::{catalog, parse_catalog_name, sym_channel, CatalogEntry, CATALOG_NAMES};
pub use format::{parse_operator, render_operator};

/// A multi-index `alpha` in `(N u {0})^d`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("multi-index must have at least one entry".into()));
        }
        Ok(Self(entries))
    }

    /// The zero multi-index of length `dim`.
    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// `e_i + e_j` style constructor: one unit per listed axis.
    pub fn from_axes(dim: usize, axes: &[usize]) -> Self {
        let mut e = vec![0; dim];
        for &a in axes {
            e[a] += 1;
        }
        Self(e)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|alpha|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    /// `xi^alpha = xi_1^alpha_1 ... xi_d^alpha_d`.
    pub fn monomial(&self, xi: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(xi)
            .filter(|(&a, _)| a > 0)
            .map(|(&a, &x)| x.powi(a as i32))
            .product()
    }

    /// Same as [`monomial`](Self::monomial) for integer frequencies.
    pub fn monomial_int(&self, m: &[i64]) -> f64 {
        self.0
            .iter()
            .zip(m)
            .filter(|(&a, _)| a > 0)
            .map(|(&a, &x)| (x as f64).powi(a as i32))
            .product()
    }

    /// All multi-indices of length `dim` with `|alpha| = order`, in lexicographic order.
    pub fn all_of_order(dim: usize, order: usize) -> Vec<MultiIndex> {
        fn rec(dim: usize, left: usize, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if prefix.len() + 1 == dim {
                prefix.push(left as u32);
                out.push(MultiIndex(prefix.clone()));
                prefix.pop();
                return;
            }
            for a in 0..=left {
                prefix.push(a as u32);
                rec(dim, left - a, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(dim, order, &mut Vec::with_capacity(dim), &mut out);
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `(2 pi i)^p`.
pub fn two_pi_i_pow(p: usize) -> Complex64 {
    let mag = (2.0 * std::f64::consts::PI).powi(p as i32);
    match p % 4 {
        0 => Complex64::new(mag, 0.0),
        1 => Complex64::new(0.0, mag),
        2 => Complex64::new(-mag, 0.0),
        _ => Complex64::new(0.0, -mag),
    }
}

/// Immutable constant-coefficient differential operator.
///
/// `terms` maps each multi-index to an `n x ell` coefficient matrix. The
/// order `k` is the largest `|alpha|` among the terms; the terms of that order
/// must not all vanish.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialOperator {
    dim: usize,
    channels: usize,
    equations: usize,
    order: usize,
    terms: BTreeMap<MultiIndex, DMatrix<f64>>,
    name: Option<String>,
}

impl DifferentialOperator {
    pub fn new<I>(
        dim: usize,
        channels: usize,
        equations: usize,
        terms: I,
        name: Option<String>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, DMatrix<f64>)>,
    {
        if dim == 0 || channels == 0 || equations == 0 {
            return Err(Error::InvalidArgument(format!(
                "d, ell and n must be positive (got d={dim}, ell={channels}, n={equations})"
            )));
        }
        let mut map = BTreeMap::new();
        for (alpha, matrix) in terms {
            if alpha.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: alpha.dim() });
            }
            if matrix.nrows() != equations || matrix.ncols() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "term {alpha} has a {}x{} matrix, expected {equations}x{channels}",
                    matrix.nrows(),
                    matrix.ncols()
                )));
            }
            if matrix.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("term {alpha} has non-finite entries")));
            }
            if map.insert(alpha.clone(), matrix).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate term {alpha}")));
            }
        }
        if map.is_empty() {
            return Err(Error::EmptyOperator);
        }
        let order = map.keys().map(MultiIndex::order).max().unwrap_or(0);
        let top_nonzero = map
            .iter()
            .any(|(a, m)| a.order() == order && m.iter().any(|&x| x != 0.0));
        if !top_nonzero {
            return Err(Error::NoTopOrderTerm);
        }
        Ok(Self { dim, channels, equations, order, terms: map, name })
    }

    /// Space dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of field channels `ell`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of equations `n`.
    pub fn equations(&self) -> usize {
        self.equations
    }

    /// Order `k`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &DMatrix<f64>)> {
        self.terms.iter()
    }

    pub fn term(&self, alpha: &MultiIndex) -> Option<&DMatrix<f64>> {
        self.terms.get(alpha)
    }

    /// True iff every term has order exactly `k`.
    pub fn is_homogeneous(&self) -> bool {
        self.terms.keys().all(|a| a.order() == self.order)
    }

    /// The top-order part `A^k`.
    pub fn principal_part(&self) -> DifferentialOperator {
        let terms = self
            .terms
            .iter()
            .filter(|(a, _)| a.order() == self.order)
            .map(|(a, m)| (a.clone(), m.clone()))
            .collect();
        Self { terms, ..self.clone() }
    }

    /// The lower-order part `A^{<k}`, if any term of order below `k` exists.
    pub fn lower_order_terms(&self) -> Vec<(&MultiIndex, &DMatrix<f64>)> {
        self.terms.iter().filter(|(a, _)| a.order() < self.order).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: len });
        }
        Ok(())
    }

    /// Real principal symbol `sum_{|alpha|=k} A_alpha xi^alpha`.
    ///
    /// The factor `(2 pi i)^k` is left out; see [`full_symbol`](Self::full_symbol).
    pub fn principal_symbol(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(xi.len())?;
        let mut out = DMatrix::zeros(self.equations, self.channels);
        for (alpha, a) in self.terms.iter().filter(|(a, _)| a.order() == self.order) {
            let w = alpha.monomial(xi);
            if w != 0.0 {
                out += a * w;
            }
        }
        Ok(out)
    }

    /// Complex symbol `sum_{|alpha|<=k} (2 pi i)^{|alpha|} A_alpha m^alpha`.
    pub fn full_symbol(&self, m: &[f64]) -> Result<DMatrix<Complex64>> {
        self.check_len(m.len())?;
        Ok(self.symbol_filtered(|alpha| alpha.monomial(m), |_| true))
    }

    /// `(2 pi i)^k` times the principal symbol, at an integer frequency.
    pub fn principal_full_symbol_int(&self, m: &[i64]) -> DMatrix<Complex64> {
        let k = self.order;
        self.symbol_filtered(|alpha| alpha.monomial_int(m), |alpha| alpha.order() == k)
    }

    /// Full symbol at an integer frequency.
    pub fn full_symbol_int(&self, m: &[i64]) -> DMatrix<Complex64> {
        self.symbol_filtered(|alpha| alpha.monomial_int(m), |_| true)
    }

    /// Symbol of the lower-order part `A^{<k}` at an integer frequency.
    pub fn lower_full_symbol_int(&self, m: &[i64]) -> DMatrix<Complex64> {
        let k = self.order;
        self.symbol_filtered(|alpha| alpha.monomial_int(m), |alpha| alpha.order() < k)
    }

    fn symbol_filtered(
        &self,
        monomial: impl Fn(&MultiIndex) -> f64,
        keep: impl Fn(&MultiIndex) -> bool,
    ) -> DMatrix<Complex64> {
        let mut out = DMatrix::from_element(self.equations, self.channels, Complex64::new(0.0, 0.0));
        for (alpha, a) in self.terms.iter().filter(|(a, _)| keep(a)) {
            let w = monomial(alpha);
            if w == 0.0 {
                continue;
            }
            let c = two_pi_i_pow(alpha.order()) * w;
            for (o, &x) in out.iter_mut().zip(a.iter()) {
                *o += c * x;
            }
        }
        out
    }
}
