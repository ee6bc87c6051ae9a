//! Wave-cone membership by global minimisation of `|A(xi) v|` over the unit
//! sphere.
//!
//! The search evaluates a fixed hemisphere point set (antipodal points give
//! the same value) and polishes the best few candidates with a Nelder-Mead
//! simplex on a tangent-plane chart. Results are deterministic for fixed
//! inputs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::DifferentialOperator;

/// Relative membership tolerance used by [`in_wave_cone`] callers that have no
/// reason to pick another.
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-6;

const GRID_2D: usize = 4096;
const GRID_3D: usize = 8192;
const GRID_HIGH: usize = 1 << 13;
const REFINE_ITERATIONS: usize = 200;
const SIMPLEX_DIAMETER_TOL: f64 = 1e-12;
const POLISHED_CANDIDATES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SphereSearchResult {
    /// `min_{|xi|=1} |A(xi) v|`, up to grid resolution and polish tolerance.
    pub gap: f64,
    pub argmin_xi: Vec<f64>,
    pub grid_points: usize,
    pub refinement_iterations: usize,
    /// Spacing of the coarse point set.
    pub certified_resolution: f64,
}

/// Outcome of a membership test.
#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// `tol * |v| * scale(op)`.
    pub threshold: f64,
    pub search: SphereSearchResult,
}

/// Deterministic hemisphere point set and its resolution.
pub fn sphere_points(dim: usize) -> (Vec<Vec<f64>>, f64) {
    match dim {
        1 => (vec![vec![1.0]], 0.0),
        2 => {
            let pts = (0..GRID_2D)
                .map(|j| {
                    let t = PI * j as f64 / GRID_2D as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect();
            (pts, PI / GRID_2D as f64)
        }
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            let pts = (0..GRID_3D)
                .map(|i| {
                    let z = (i as f64 + 0.5) / GRID_3D as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect();
            (pts, resolution_estimate(3, GRID_3D))
        }
        _ => (halton_directions(dim, GRID_HIGH), resolution_estimate(dim, GRID_HIGH)),
    }
}

fn gamma_half(k: usize) -> f64 {
    // Gamma(k / 2)
    let (mut x, mut g) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (0.5, PI.sqrt()) };
    while x < k as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

// (hemisphere area / points)^{1/(d-1)}
fn resolution_estimate(dim: usize, points: usize) -> f64 {
    let area = PI.powf(dim as f64 / 2.0) / gamma_half(dim);
    (area / points as f64).powf(1.0 / (dim as f64 - 1.0))
}

fn radical_inverse(base: u64, mut i: u64) -> f64 {
    let (mut inv, mut f) = (0.0, 1.0 / base as f64);
    while i > 0 {
        inv += f * (i % base) as f64;
        i /= base;
        f /= base as f64;
    }
    inv
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().all(|p| !c.is_multiple_of(*p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

// Halton points accepted inside the shell 0.25 <= |x| <= 1, projected radially.
fn halton_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let primes = first_primes(dim);
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let mut x: Vec<f64> = primes.iter().map(|&p| 2.0 * radical_inverse(p, i) - 1.0).collect();
        i += 1;
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(0.25..=1.0).contains(&r) {
            continue;
        }
        let sign = if x[dim - 1] < 0.0 { -1.0 } else { 1.0 };
        x.iter_mut().for_each(|a| *a *= sign / r);
        out.push(x);
    }
    out
}

/// `xi -> |A(xi) v|` with the products `A_alpha v` precomputed.
struct GapObjective {
    terms: Vec<(crate::operator::MultiIndex, DVector<f64>)>,
    equations: usize,
}

impl GapObjective {
    fn new(op: &DifferentialOperator, v: &[f64]) -> Self {
        let v = DVector::from_column_slice(v);
        let terms = op
            .terms()
            .filter(|(a, _)| a.order() == op.order())
            .map(|(a, m)| (a.clone(), m * &v))
            .collect();
        Self { terms, equations: op.equations() }
    }

    fn eval(&self, xi: &[f64]) -> f64 {
        let mut acc = DVector::zeros(self.equations);
        for (alpha, av) in &self.terms {
            let w = alpha.monomial(xi);
            if w != 0.0 {
                acc += av * w;
            }
        }
        acc.norm()
    }
}

fn normalized(x: &[f64]) -> Vec<f64> {
    let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    x.iter().map(|a| a / r).collect()
}

// Orthonormal basis of the tangent space at the unit vector `base`.
fn tangent_basis(base: &[f64]) -> Vec<Vec<f64>> {
    let dim = base.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim - 1);
    let mut axes: Vec<usize> = (0..dim).collect();
    // start from the axes least aligned with base
    axes.sort_by(|&a, &b| base[a].abs().total_cmp(&base[b].abs()).then(a.cmp(&b)));
    for &axis in &axes {
        if basis.len() == dim - 1 {
            break;
        }
        let mut e = vec![0.0; dim];
        e[axis] = 1.0;
        for u in std::iter::once(base).chain(basis.iter().map(Vec::as_slice)) {
            let dot: f64 = e.iter().zip(u).map(|(a, b)| a * b).sum();
            e.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let r = e.iter().map(|a| a * a).sum::<f64>().sqrt();
        if r > 1e-8 {
            e.iter_mut().for_each(|a| *a /= r);
            basis.push(e);
        }
    }
    basis
}

struct Polish {
    xi: Vec<f64>,
    value: f64,
    iterations: usize,
}

fn polish(objective: &GapObjective, start: &[f64], step: f64) -> Polish {
    let dim = start.len();
    let m = dim - 1;
    let basis = tangent_basis(start);
    let chart = |y: &[f64]| -> Vec<f64> {
        let mut p = start.to_vec();
        for (coef, b) in y.iter().zip(&basis) {
            p.iter_mut().zip(b).for_each(|(a, bb)| *a += coef * bb);
        }
        normalized(&p)
    };
    let f = |y: &[f64]| objective.eval(&chart(y));

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m + 1);
    let origin = vec![0.0; m];
    simplex.push((origin.clone(), f(&origin)));
    for i in 0..m {
        let mut y = origin.clone();
        y[i] = step;
        let v = f(&y);
        simplex.push((y, v));
    }

    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    let mut iterations = 0;
    while iterations < REFINE_ITERATIONS {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0.clone();
        let diameter = simplex[1..]
            .iter()
            .map(|(y, _)| y.iter().zip(&best).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < SIMPLEX_DIAMETER_TOL {
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; m];
        for (y, _) in &simplex[..m] {
            centroid.iter_mut().zip(y).for_each(|(c, a)| *c += a / m as f64);
        }
        let (worst, f_worst) = simplex[m].clone();
        let f_best = simplex[0].1;
        let f_second = simplex[m - 1].1;

        let reflected = lerp(&centroid, &worst, -1.0);
        let f_r = f(&reflected);
        if f_r < f_best {
            let expanded = lerp(&centroid, &worst, -2.0);
            let f_e = f(&expanded);
            simplex[m] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
            continue;
        }
        if f_r < f_second {
            simplex[m] = (reflected, f_r);
            continue;
        }
        let contracted = if f_r < f_worst {
            lerp(&centroid, &reflected, 0.5)
        } else {
            lerp(&centroid, &worst, 0.5)
        };
        let f_c = f(&contracted);
        if f_c < f_r.min(f_worst) {
            simplex[m] = (contracted, f_c);
            continue;
        }
        for vertex in simplex.iter_mut().skip(1) {
            let y = lerp(&best, &vertex.0, 0.5);
            let v = f(&y);
            *vertex = (y, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let xi = chart(&simplex[0].0);
    let value = objective.eval(&xi);
    Polish { xi, value, iterations }
}

fn check_vector(op: &DifferentialOperator, v: &[f64]) -> Result<f64> {
    if v.len() != op.channels() {
        return Err(Error::DimensionMismatch { expected: op.channels(), got: v.len() });
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(norm)
}

/// `min_{|xi|=1} |A(xi) v|` using the real principal symbol.
pub fn symbol_gap(op: &DifferentialOperator, v: &[f64]) -> Result<SphereSearchResult> {
    check_vector(op, v)?;
    let objective = GapObjective::new(op, v);
    let (points, resolution) = sphere_points(op.dim());
    let values: Vec<f64> = points.par_iter().map(|xi| objective.eval(xi)).collect();

    if op.dim() == 1 {
        return Ok(SphereSearchResult {
            gap: values[0],
            argmin_xi: points[0].clone(),
            grid_points: 1,
            refinement_iterations: 0,
            certified_resolution: 0.0,
        });
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut starts: Vec<usize> = Vec::with_capacity(POLISHED_CANDIDATES);
    for &i in &order {
        if starts.len() == POLISHED_CANDIDATES {
            break;
        }
        let far = starts.iter().all(|&j| {
            let dot: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum();
            let sep = (2.0 - 2.0 * dot.abs()).max(0.0).sqrt();
            sep > 3.0 * resolution
        });
        if far {
            starts.push(i);
        }
    }

    let polished: Vec<Polish> =
        starts.par_iter().map(|&i| polish(&objective, &points[i], resolution)).collect();
    let best = polished
        .into_iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one candidate");

    Ok(SphereSearchResult {
        gap: best.value,
        argmin_xi: best.xi,
        grid_points: points.len(),
        refinement_iterations: best.iterations,
        certified_resolution: resolution,
    })
}

/// Largest operator norm of the principal symbol over the coarse point set.
pub fn symbol_scale(op: &DifferentialOperator) -> f64 {
    let (points, _) = sphere_points(op.dim());
    let norms: Vec<f64> = points
        .par_iter()
        .map(|xi| {
            let s: DMatrix<f64> = op.principal_symbol(xi).expect("grid matches dimension");
            s.singular_values().iter().copied().fold(0.0, f64::max)
        })
        .collect();
    norms.into_iter().fold(0.0, f64::max)
}

/// `v` is declared a member when `gap <= tol * |v| * scale(op)`.
pub fn in_wave_cone(op: &DifferentialOperator, v: &[f64], tol: f64) -> Result<Membership> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("membership tolerance must be positive, got {tol}")));
    }
    let norm = check_vector(op, v)?;
    let search = symbol_gap(op, v)?;
    let threshold = tol * norm * symbol_scale(op);
    Ok(Membership { member: search.gap <= threshold, threshold, search })
}

/// `c = (2 pi)^k * gap`, so that `|A(xi) lambda| >= c |xi|^k` with the
/// `(2 pi i)^k` normalisation.
pub fn ellipticity_constant(op: &DifferentialOperator, lambda: &[f64]) -> Result<f64> {
    let membership = in_wave_cone(op, lambda, DEFAULT_MEMBERSHIP_TOL)?;
    if membership.member {
        return Err(Error::InWaveCone { gap: membership.search.gap });
    }
    Ok((2.0 * PI).powi(op.order() as i32) * membership.search.gap)
}
