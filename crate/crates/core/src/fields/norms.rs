//! Norms and diagnostics: L1, L2, L-infinity, weak-L1, Sobolev, distance to
//! the two-state set, equi-integrability and convergence in measure.

use std::f64::consts::PI;

use super::{PeriodicField, PeriodicGrid};
use crate::error::{Error, Result};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_state(field: &PeriodicField, state: &[f64]) -> Result<()> {
    if state.len() != field.channels() {
        return Err(Error::DimensionMismatch { expected: field.channels(), got: state.len() });
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>, count: usize) -> f64 {
    xs.sum::<f64>() / count as f64
}

/// Mean of the pointwise Euclidean norm.
pub fn l1_norm(field: &PeriodicField) -> f64 {
    mean(field.pointwise_norms().into_iter(), field.len())
}

/// Root mean square of the pointwise norm.
pub fn l2_norm(field: &PeriodicField) -> f64 {
    mean(field.values().iter().map(|x| x * x), field.len()).sqrt()
}

pub fn linf_norm(field: &PeriodicField) -> f64 {
    field.pointwise_norms().into_iter().fold(0.0, f64::max)
}

/// Mean of `|v(x) - state|`.
pub fn state_l1_distance(field: &PeriodicField, state: &[f64]) -> Result<f64> {
    check_state(field, state)?;
    Ok(mean(field.samples().map(|s| euclid(s, state)), field.len()))
}

/// Scalar field `dist(v(x), {lambda, mu})`.
pub fn dist_field(field: &PeriodicField, lambda: &[f64], mu: &[f64]) -> Result<PeriodicField> {
    check_state(field, lambda)?;
    check_state(field, mu)?;
    let values = field.samples().map(|s| euclid(s, lambda).min(euclid(s, mu))).collect();
    PeriodicField::new(field.grid(), 1, values)
}

/// Mean of `min(|v - lambda|, |v - mu|)`.
pub fn dist_to_states(field: &PeriodicField, lambda: &[f64], mu: &[f64]) -> Result<f64> {
    Ok(l1_norm(&dist_field(field, lambda, mu)?))
}

/// `sup_t t * |{|v| > t}|`, attained at sample values:
/// `max_i |v|_(i) * (count - i) / count` over the ascending order statistics.
pub fn weak_l1_quasinorm(field: &PeriodicField) -> f64 {
    let mut norms = field.pointwise_norms();
    norms.sort_by(f64::total_cmp);
    let count = norms.len() as f64;
    norms
        .iter()
        .enumerate()
        .map(|(i, &x)| x * (count - i as f64) / count)
        .fold(0.0, f64::max)
}

/// `(sum_m (1 + 4 pi^2 |m|^2)^s |v_hat(m)|^2)^{1/2}`.
pub fn sobolev_norm(field: &PeriodicField, s: f64) -> f64 {
    let spec = field.spectrum();
    let grid = field.grid();
    let mut total = 0.0;
    for idx in 0..grid.len() {
        let m2: f64 = grid.frequency(idx).iter().map(|&x| (x * x) as f64).sum();
        let w = (1.0 + 4.0 * PI * PI * m2).powf(s);
        let e: f64 = (0..field.channels()).map(|c| spec.get(c, idx).norm_sqr()).sum();
        total += w * e;
    }
    total.sqrt()
}

/// Mean of `min(|v|, 1)`; tends to zero iff `v -> 0` in measure.
pub fn convergence_in_measure_metric(field: &PeriodicField) -> f64 {
    mean(field.pointwise_norms().into_iter().map(|x| x.min(1.0)), field.len())
}

/// Samples breaking `{dist > 2t} ⊂ {|v| > t} ⊂ {dist > t/2}`, where `dist` is
/// the distance to `{lambda, mu}`. Requires `t >= 2 max(|lambda|, |mu|)`.
pub fn sandwich_violations(field: &PeriodicField, lambda: &[f64], mu: &[f64], t: f64) -> Result<usize> {
    check_state(field, lambda)?;
    check_state(field, mu)?;
    let zero = vec![0.0; lambda.len()];
    let bound = 2.0 * euclid(lambda, &zero).max(euclid(mu, &zero));
    if !(t >= bound) {
        return Err(Error::InvalidArgument(format!("threshold {t} is below 2 max(|lambda|, |mu|) = {bound}")));
    }
    Ok(field
        .samples()
        .filter(|s| {
            let dist = euclid(s, lambda).min(euclid(s, mu));
            let norm = euclid(s, &zero);
            (dist > 2.0 * t && norm <= t) || (norm > t && dist <= 0.5 * t)
        })
        .count())
}

/// Entry `(j, t)` is the mean of `|v_j|` restricted to `{|v_j| > t}`.
pub fn equiintegrability_profile(fields: &[PeriodicField], thresholds: &[f64]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = fields.first() else {
        return Ok(Vec::new());
    };
    let (grid, ell): (PeriodicGrid, usize) = (first.grid(), first.channels());
    fields
        .iter()
        .map(|f| {
            if f.grid() != grid {
                return Err(Error::InvalidGrid("profile needs a common grid".into()));
            }
            if f.channels() != ell {
                return Err(Error::DimensionMismatch { expected: ell, got: f.channels() });
            }
            let norms = f.pointwise_norms();
            Ok(thresholds
                .iter()
                .map(|&t| mean(norms.iter().copied().filter(|&x| x > t), norms.len()))
                .collect())
        })
        .collect()
}

/// Outcome of [`assess_equiintegrability`].
#[derive(Clone, Debug, PartialEq)]
pub struct EquiIntegrability {
    /// `sup_j` of the profile at each threshold.
    pub tail: Vec<f64>,
    pub equiintegrable: bool,
}

/// Flags a family as non-equi-integrable when the uniform tail mass at the
/// largest threshold is still above `decay_ratio` times the tail at the
/// smallest one. Thresholds are taken in the order given (ascending).
pub fn assess_equiintegrability(profile: &[Vec<f64>], decay_ratio: f64) -> EquiIntegrability {
    let cols = profile.first().map_or(0, Vec::len);
    let tail: Vec<f64> = (0..cols)
        .map(|c| profile.iter().map(|row| row[c]).fold(0.0, f64::max))
        .collect();
    let equiintegrable = match (tail.first(), tail.last()) {
        (Some(&first), Some(&last)) => last == 0.0 || last <= decay_ratio * first,
        _ => true,
    };
    EquiIntegrability { tail, equiintegrable }
}
