use super::{PeriodicField, PeriodicGrid};
use crate::error::{Error, Result};

/// Two-valued laminate `lambda h(x.q) + mu (1 - h(x.q))`.
///
/// `h` is the 1-periodic profile equal to one on `[j, j + theta)`, repeated
/// `period_count` times per unit cell along `q`. On the grid, sample `i` has
/// phase `r = (period_count * q.i) mod N` and takes `lambda` iff `r < theta N`.
pub fn laminate_field(
    grid: PeriodicGrid,
    lambda: &[f64],
    mu: &[f64],
    q: &[i64],
    theta: f64,
    period_count: u32,
) -> Result<PeriodicField> {
    if lambda.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: lambda.len(), got: mu.len() });
    }
    if lambda.is_empty() {
        return Err(Error::InvalidArgument("states need at least one channel".into()));
    }
    if q.len() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: q.len() });
    }
    if q.iter().all(|&x| x == 0) {
        return Err(Error::InvalidArgument("laminate direction q must be nonzero".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("duty cycle must lie in (0,1), got {theta}")));
    }
    if period_count == 0 {
        return Err(Error::InvalidArgument("period_count must be positive".into()));
    }
    let n = grid.n() as i64;
    let cut = theta * grid.n() as f64;
    let ell = lambda.len();
    let mut values = Vec::with_capacity(grid.len() * ell);
    for idx in 0..grid.len() {
        let phase: i64 = grid.coords(idx).iter().zip(q).map(|(&i, &qa)| i as i64 * qa).sum();
        let r = (phase * period_count as i64).rem_euclid(n);
        let state = if (r as f64) < cut { lambda } else { mu };
        values.extend_from_slice(state);
    }
    PeriodicField::new(grid, ell, values)
}

/// Fraction of samples at least as close to `lambda` as to `mu` (ties count for `lambda`).
pub fn lambda_fraction(field: &PeriodicField, lambda: &[f64], mu: &[f64]) -> Result<f64> {
    if lambda.len() != field.channels() || mu.len() != field.channels() {
        return Err(Error::DimensionMismatch { expected: field.channels(), got: lambda.len() });
    }
    let d2 = |s: &[f64], t: &[f64]| s.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let hits = field.samples().filter(|s| d2(s, lambda) <= d2(s, mu)).count();
    Ok(hits as f64 / field.len() as f64)
}
