//! Two-state experiments: alternating projection between the `A`-free affine
//! set with prescribed mean and the pointwise set `{lambda, mu}`, diagnostics
//! for supplied sequences, and forced variants with vanishing right-hand side.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fields::{
    assess_equiintegrability, dist_to_states, equiintegrability_profile, l1_norm, l2_norm,
    laminate_field, lambda_fraction, state_l1_distance, EquiIntegrability, PeriodicField, PeriodicGrid,
};
use crate::operator::{catalog, parse_catalog_name, parse_operator, CatalogEntry, DifferentialOperator, MultiIndex};
use crate::spectral::SpectralOperator;
use crate::wavecone::{in_wave_cone, DEFAULT_MEMBERSHIP_TOL};

/// Default `eps_low` relative to `|lambda - mu|`.
pub const DEFAULT_EPS_LOW_RELATIVE: f64 = 1e-4;
/// Default fraction tolerance.
pub const DEFAULT_DELTA: f64 = 0.1;
const CYCLE_WINDOW: usize = 8;
const PLATEAU_RELATIVE_DROP: f64 = 1e-3;
const CALIBRATION_FLOOR: f64 = 1e-12;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(","))
}

/// The inclusion `v in {lambda, mu}` under `A v = 0` with mean
/// `theta lambda + (1 - theta) mu`.
#[derive(Clone, Debug)]
pub struct TwoStateProblem {
    spectral: Arc<SpectralOperator>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    theta: f64,
    seed: u64,
    compatible: bool,
    gap: f64,
}

impl TwoStateProblem {
    pub fn new(
        op: DifferentialOperator,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        theta: f64,
        grid: PeriodicGrid,
        seed: u64,
    ) -> Result<Self> {
        Self::with_spectral(Arc::new(SpectralOperator::new(op, grid)?), lambda, mu, theta, seed)
    }

    /// Reuses an existing symbol cache.
    pub fn with_spectral(
        spectral: Arc<SpectralOperator>,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        theta: f64,
        seed: u64,
    ) -> Result<Self> {
        let ell = spectral.operator().channels();
        for s in [&lambda, &mu] {
            if s.len() != ell {
                return Err(Error::DimensionMismatch { expected: ell, got: s.len() });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("states must be finite".into()));
            }
        }
        if lambda == mu {
            return Err(Error::InvalidArgument("lambda and mu must differ".into()));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidArgument(format!("theta must lie in (0,1), got {theta}")));
        }
        let jump: Vec<f64> = lambda.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let membership = in_wave_cone(spectral.operator(), &jump, DEFAULT_MEMBERSHIP_TOL)?;
        Ok(Self {
            spectral,
            lambda,
            mu,
            theta,
            seed,
            compatible: membership.member,
            gap: membership.search.gap,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn spectral(&self) -> &SpectralOperator {
        &self.spectral
    }

    pub fn operator(&self) -> &DifferentialOperator {
        self.spectral.operator()
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.spectral.grid()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Whether `lambda - mu` lies in the wave cone (fixed at construction).
    pub fn compatible(&self) -> bool {
        self.compatible
    }

    /// `min |A(xi)(lambda - mu)|` over unit `xi`.
    pub fn symbol_gap(&self) -> f64 {
        self.gap
    }

    pub fn jump_norm(&self) -> f64 {
        euclid(&self.lambda, &self.mu)
    }

    /// Nearest fraction a grid laminate can realise: `ceil(theta N) / N`.
    pub fn grid_fraction(&self) -> f64 {
        let n = self.grid().n() as f64;
        (self.theta * n).ceil() / n
    }

    /// Mean imposed after every projection.
    pub fn target_mean(&self) -> Vec<f64> {
        let t = self.grid_fraction();
        self.lambda.iter().zip(&self.mu).map(|(l, m)| t * l + (1.0 - t) * m).collect()
    }

    /// Direction in `{-1,0,1}^d` minimising `|A(q)(lambda - mu)| / |q|^k`;
    /// the first one in lexicographic order wins ties.
    pub fn laminate_direction(&self) -> Vec<i64> {
        let d = self.grid().dim();
        let op = self.operator();
        let jump = nalgebra::DVector::from_iterator(
            self.lambda.len(),
            self.lambda.iter().zip(&self.mu).map(|(a, b)| a - b),
        );
        let mut best: Option<(f64, Vec<i64>)> = None;
        for code in 0..3usize.pow(d as u32) {
            let mut q = vec![0i64; d];
            let mut rest = code;
            for a in (0..d).rev() {
                q[a] = (rest % 3) as i64 - 1;
                rest /= 3;
            }
            let Some(lead) = q.iter().find(|&&x| x != 0) else { continue };
            if *lead < 0 {
                continue;
            }
            let xi: Vec<f64> = q.iter().map(|&x| x as f64).collect();
            let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            let unit: Vec<f64> = xi.iter().map(|x| x / norm).collect();
            let s = op.principal_symbol(&unit).expect("dimension matches");
            let value = (s * &jump).norm();
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, q));
            }
        }
        best.expect("some nonzero direction").1
    }

    fn describe(&self) -> String {
        let op = self.operator();
        format!(
            "op={} d={} lambda={} mu={} theta={} n={} compatible={}",
            op.name().unwrap_or("custom"),
            op.dim(),
            fmt_vec(&self.lambda),
            fmt_vec(&self.mu),
            self.theta,
            self.grid().n(),
            self.compatible
        )
    }
}

/// Curl of 2x2 matrix fields, `lambda - mu = e1 (x) e1`, `theta = 1/2`.
pub fn compatible_reference(n: usize, seed: u64) -> Result<TwoStateProblem> {
    let op = catalog(CatalogEntry::Curl { rows: 2, dim: 2 })?;
    TwoStateProblem::new(op, vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4], 0.5, PeriodicGrid::new(2, n)?, seed)
}

/// Row divergence of 2x2 matrix fields, `lambda = I`, `mu = -I`, `theta = 1/2`.
pub fn incompatible_reference(n: usize, seed: u64) -> Result<TwoStateProblem> {
    let op = catalog(CatalogEntry::Div { rows: 2, dim: 2 })?;
    TwoStateProblem::new(op, vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, 0.0, 0.0, -1.0], 0.5, PeriodicGrid::new(2, n)?, seed)
}

/// Dichotomy thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Objective at or below which a run counts as an exact two-state field.
    pub eps_low: f64,
    /// Allowed distance of the fraction from `theta`.
    pub delta: f64,
}

impl Thresholds {
    /// `(1e-4 |lambda - mu|, 0.1)`.
    pub fn pinned(problem: &TwoStateProblem) -> Self {
        Self { eps_low: DEFAULT_EPS_LOW_RELATIVE * problem.jump_norm(), delta: DEFAULT_DELTA }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    RigidCollapse,
    RigidObstructed,
    LaminateFound,
    Inconclusive,
    HypothesesViolated,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::RigidCollapse => "rigid-collapse",
            Verdict::RigidObstructed => "rigid-obstructed",
            Verdict::LaminateFound => "laminate-found",
            Verdict::Inconclusive => "inconclusive",
            Verdict::HypothesesViolated => "hypotheses-violated",
        }
    }

    pub fn is_rigid(&self) -> bool {
        matches!(self, Verdict::RigidCollapse | Verdict::RigidObstructed)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verdict from the final objective and fraction of a run.
///
/// * laminate-found: objective `<= eps_low` and fraction within `delta` of `theta`;
/// * rigid-collapse: fraction within `delta` of 0 or 1;
/// * rigid-obstructed: the run has stalled with objective `>= eps_low` and
///   fraction within `delta` of `theta`;
/// * inconclusive otherwise.
pub fn classify(objective: f64, fraction: f64, stalled: bool, theta: f64, t: &Thresholds) -> Verdict {
    let near_theta = (fraction - theta).abs() <= t.delta;
    if objective <= t.eps_low && near_theta {
        Verdict::LaminateFound
    } else if fraction <= t.delta || fraction >= 1.0 - t.delta {
        Verdict::RigidCollapse
    } else if stalled && objective >= t.eps_low && near_theta {
        Verdict::RigidObstructed
    } else {
        Verdict::Inconclusive
    }
}

/// Trajectories and verdict of one alternating-projection run. Row `0` is
/// the initial field; row `i` is the field after iteration `i`.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: String,
    pub init: String,
    pub seed: u64,
    pub theta: f64,
    pub objective: Vec<f64>,
    pub fraction: Vec<f64>,
    pub residual: Vec<f64>,
    pub dist_lambda: Vec<f64>,
    pub dist_mu: Vec<f64>,
    /// `|a_i - snap(a_i)|_2` for iterations `1..`.
    pub snap_gap: Vec<f64>,
    /// `|restore(s_i) - s_i|_2` for iterations `1..`.
    pub projection_gap: Vec<f64>,
    /// Iteration at which the snap pattern first repeated the previous one.
    pub fixed_point_at: Option<usize>,
    /// Snap pattern repeated within the last few iterations.
    pub cycled: bool,
    pub stalled: bool,
    /// Initial field was a pure state; no iteration was performed.
    pub trivial: bool,
    pub thresholds: Thresholds,
    pub verdict: Verdict,
    pub final_field: PeriodicField,
}

impl ExperimentReport {
    pub fn rows(&self) -> usize {
        self.objective.len()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("at least one row")
    }

    pub fn final_fraction(&self) -> f64 {
        *self.fraction.last().expect("at least one row")
    }

    /// Recomputes the verdict under new thresholds.
    pub fn reclassify(&mut self, thresholds: &Thresholds) {
        self.thresholds = *thresholds;
        self.verdict = if self.trivial {
            Verdict::RigidCollapse
        } else {
            classify(self.final_objective(), self.final_fraction(), self.stalled, self.theta, thresholds)
        };
    }

    /// `iter,objective,fraction,residual,dist_lambda,dist_mu`, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,fraction,residual,dist_lambda,dist_mu\n");
        for i in 0..self.rows() {
            out.push_str(&format!(
                "{i},{:e},{:e},{:e},{:e},{:e}\n",
                self.objective[i], self.fraction[i], self.residual[i], self.dist_lambda[i], self.dist_mu[i]
            ));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "seed={} init={} verdict={} objective={:e} fraction={:e} residual={:e} fixed_point_at={} eps_low={:e} delta={}",
            self.seed,
            self.init,
            self.verdict,
            self.final_objective(),
            self.final_fraction(),
            self.residual.last().copied().unwrap_or(0.0),
            self.fixed_point_at.map_or("none".to_string(), |i| i.to_string()),
            self.thresholds.eps_low,
            self.thresholds.delta
        )
    }
}

/// Alias of [`dist_to_states`].
pub fn two_state_objective(field: &PeriodicField, lambda: &[f64], mu: &[f64]) -> Result<f64> {
    dist_to_states(field, lambda, mu)
}

/// Replaces every sample by the nearer of `lambda` and `mu` (ties go to
/// `lambda`); also returns the mask of `lambda` samples.
pub fn snap_to_states(field: &PeriodicField, lambda: &[f64], mu: &[f64]) -> (PeriodicField, Vec<bool>) {
    let d2 = |s: &[f64], t: &[f64]| s.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mask: Vec<bool> = field.samples().map(|s| d2(s, lambda) <= d2(s, mu)).collect();
    let values = mask.iter().flat_map(|&m| if m { lambda } else { mu }).copied().collect();
    let snapped = PeriodicField::new(field.grid(), field.channels(), values).expect("shape preserved");
    (snapped, mask)
}

/// Seeded Gaussian noise, projected onto `ker A`, rescaled so the fluctuation
/// has `L^2` norm `amplitude`, with the problem's target mean.
pub fn generate_afree_noise(problem: &TwoStateProblem, amplitude: f64, seed: u64) -> Result<PeriodicField> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!("noise amplitude must be finite and >= 0, got {amplitude}")));
    }
    let grid = problem.grid();
    let ell = problem.lambda.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..grid.len() * ell).map(|_| StandardNormal.sample(&mut rng)).collect();
    let projected = problem.spectral.afree_project(&PeriodicField::new(grid, ell, values)?)?;
    let mean: Vec<f64> = projected.mean().iter().map(|x| -x).collect();
    let fluctuation = projected.shifted(&mean)?;
    let norm = l2_norm(&fluctuation);
    let scale = if norm > 0.0 { amplitude / norm } else { 0.0 };
    fluctuation.scaled(scale).shifted(&problem.target_mean())
}

/// Starting field of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Laminate along [`TwoStateProblem::laminate_direction`] plus `A`-free noise.
    #[default]
    LaminateNoise,
    /// `A`-free noise around the target mean.
    Noise,
}

impl InitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitKind::LaminateNoise => "laminate-noise",
            InitKind::Noise => "noise",
        }
    }
}

/// Builds the initial field; `relative_amplitude` multiplies `|lambda - mu|`.
pub fn initial_field(problem: &TwoStateProblem, kind: InitKind, relative_amplitude: f64, seed: u64) -> Result<PeriodicField> {
    let amplitude = relative_amplitude * problem.jump_norm();
    let noise = generate_afree_noise(problem, amplitude, seed)?;
    match kind {
        InitKind::Noise => Ok(noise),
        InitKind::LaminateNoise => {
            let q = problem.laminate_direction();
            let lam = laminate_field(problem.grid(), &problem.lambda, &problem.mu, &q, problem.theta, 1)?;
            let target: Vec<f64> = problem.target_mean().iter().map(|x| -x).collect();
            lam.lin_comb(1.0, &noise.shifted(&target)?, 1.0)
        }
    }
}

fn is_pure_state(field: &PeriodicField, state: &[f64]) -> bool {
    field.samples().all(|s| s == state)
}

struct Trajectories {
    objective: Vec<f64>,
    fraction: Vec<f64>,
    residual: Vec<f64>,
    dist_lambda: Vec<f64>,
    dist_mu: Vec<f64>,
}

impl Trajectories {
    fn with_capacity(n: usize) -> Self {
        Self {
            objective: Vec::with_capacity(n),
            fraction: Vec::with_capacity(n),
            residual: Vec::with_capacity(n),
            dist_lambda: Vec::with_capacity(n),
            dist_mu: Vec::with_capacity(n),
        }
    }

    fn record(&mut self, problem: &TwoStateProblem, field: &PeriodicField) -> Result<()> {
        let (l, m) = (problem.lambda(), problem.mu());
        self.objective.push(dist_to_states(field, l, m)?);
        self.fraction.push(lambda_fraction(field, l, m)?);
        self.residual.push(problem.spectral.residual_negative_norm(field)?);
        self.dist_lambda.push(state_l1_distance(field, l)?);
        self.dist_mu.push(state_l1_distance(field, m)?);
        Ok(())
    }

    fn repeat_last(&mut self) {
        for v in [&mut self.objective, &mut self.fraction, &mut self.residual, &mut self.dist_lambda, &mut self.dist_mu] {
            let last = *v.last().expect("recorded");
            v.push(last);
        }
    }
}

fn check_init(problem: &TwoStateProblem, init: &PeriodicField, iterations: usize) -> Result<()> {
    if init.grid() != problem.grid() {
        return Err(Error::InvalidGrid("initial field grid does not match the problem grid".into()));
    }
    if init.channels() != problem.lambda.len() {
        return Err(Error::DimensionMismatch { expected: problem.lambda.len(), got: init.channels() });
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    if !init.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    Ok(())
}

fn l2_distance(a: &PeriodicField, b: &PeriodicField) -> Result<f64> {
    Ok(l2_norm(&a.lin_comb(1.0, b, -1.0)?))
}

fn plateaued(gaps: &[f64]) -> bool {
    let n = gaps.len();
    if n < 20 {
        return false;
    }
    let (early, last) = (gaps[n - 1 - n / 5], gaps[n - 1]);
    early - last <= PLATEAU_RELATIVE_DROP * last
}

fn run_inner(
    problem: &TwoStateProblem,
    init: &PeriodicField,
    iterations: usize,
    thresholds: &Thresholds,
    correction: Option<&PeriodicField>,
    init_label: &str,
) -> Result<ExperimentReport> {
    check_init(problem, init, iterations)?;
    let (lambda, mu) = (problem.lambda(), problem.mu());
    let mut traj = Trajectories::with_capacity(iterations + 1);
    traj.record(problem, init)?;
    let report = |traj: Trajectories, snap_gap, projection_gap, fixed_point_at, cycled, stalled, trivial, field| {
        let mut r = ExperimentReport {
            config: problem.describe(),
            init: init_label.to_string(),
            seed: problem.seed,
            theta: problem.theta,
            objective: traj.objective,
            fraction: traj.fraction,
            residual: traj.residual,
            dist_lambda: traj.dist_lambda,
            dist_mu: traj.dist_mu,
            snap_gap,
            projection_gap,
            fixed_point_at,
            cycled,
            stalled,
            trivial,
            thresholds: *thresholds,
            verdict: Verdict::Inconclusive,
            final_field: field,
        };
        r.reclassify(thresholds);
        r
    };

    if correction.is_none() && (is_pure_state(init, lambda) || is_pure_state(init, mu)) {
        for _ in 0..iterations {
            traj.repeat_last();
        }
        let zeros = vec![0.0; iterations];
        return Ok(report(traj, zeros.clone(), zeros, Some(0), true, true, true, init.clone()));
    }

    let target = problem.target_mean();
    let mut current = init.clone();
    let mut history: VecDeque<Vec<bool>> = VecDeque::with_capacity(CYCLE_WINDOW);
    let mut snap_gap = Vec::with_capacity(iterations);
    let mut projection_gap = Vec::with_capacity(iterations);
    let mut fixed_point_at = None;
    let mut cycled = false;
    for it in 1..=iterations {
        let (snapped, mask) = snap_to_states(&current, lambda, mu);
        let mut restored = problem.spectral.afree_project(&snapped)?;
        if let Some(c) = correction {
            restored = restored.lin_comb(1.0, c, 1.0)?;
        }
        let shift: Vec<f64> = target.iter().zip(restored.mean()).map(|(t, m)| t - m).collect();
        let restored = restored.shifted(&shift)?;
        if !restored.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        snap_gap.push(l2_distance(&current, &snapped)?);
        projection_gap.push(l2_distance(&restored, &snapped)?);
        traj.record(problem, &restored)?;
        cycled = history.contains(&mask);
        if history.back() == Some(&mask) {
            fixed_point_at = Some(it);
            for _ in it..iterations {
                traj.repeat_last();
                snap_gap.push(*snap_gap.last().expect("pushed"));
                projection_gap.push(*projection_gap.last().expect("pushed"));
            }
            current = restored;
            break;
        }
        if history.len() == CYCLE_WINDOW {
            history.pop_front();
        }
        history.push_back(mask);
        current = restored;
    }
    let stalled = cycled || plateaued(&snap_gap);
    Ok(report(traj, snap_gap, projection_gap, fixed_point_at, cycled, stalled, false, current))
}

/// Alternates a pointwise snap to `{lambda, mu}` with the kernel projection
/// followed by a mean reset. A snap pattern equal to the previous one is an
/// exact fixed point; the remaining rows repeat it.
pub fn alternating_projection_run(
    problem: &TwoStateProblem,
    init: &PeriodicField,
    iterations: usize,
    thresholds: &Thresholds,
) -> Result<ExperimentReport> {
    run_inner(problem, init, iterations, thresholds, None, "custom")
}

/// Runs one seed per entry of `seeds` in parallel; reports follow seed order.
pub fn run_seeds(
    problem: &TwoStateProblem,
    kind: InitKind,
    relative_amplitude: f64,
    seeds: &[u64],
    iterations: usize,
    thresholds: &Thresholds,
) -> Result<Vec<ExperimentReport>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let p = problem.with_seed(seed);
            let init = initial_field(&p, kind, relative_amplitude, seed)?;
            run_inner(&p, &init, iterations, thresholds, None, kind.as_str())
        })
        .collect()
}

/// Outcome of [`calibrate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub eps_low: f64,
    pub compatible_max: f64,
    pub incompatible_min: f64,
    /// `incompatible_min >= 100 eps_low`.
    pub clears: bool,
}

/// `eps_low = 10 * max` final objective over the compatible runs (floored at
/// `1e-12 |lambda - mu|`), checked against the incompatible runs.
pub fn calibrate(compatible: &[ExperimentReport], incompatible: &[ExperimentReport], jump_norm: f64) -> Calibration {
    let compatible_max = compatible.iter().map(|r| r.final_objective()).fold(0.0, f64::max);
    let incompatible_min = incompatible.iter().map(|r| r.final_objective()).fold(f64::INFINITY, f64::min);
    let eps_low = (10.0 * compatible_max).max(CALIBRATION_FLOOR * jump_norm);
    Calibration { eps_low, compatible_max, incompatible_min, clears: incompatible_min >= 100.0 * eps_low }
}

/// `true` when the last value is at most a tenth of the largest one, or the
/// whole trajectory stays below `floor`.
pub fn tends_to_zero(trajectory: &[f64], floor: f64) -> bool {
    let Some(&last) = trajectory.last() else { return false };
    let max = trajectory.iter().copied().fold(0.0, f64::max);
    max <= floor || last <= 0.1 * max
}

/// Which pure state a sequence collapses to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PureState {
    Lambda,
    Mu,
}

#[derive(Clone, Debug)]
pub struct SequenceCheckOptions {
    /// Uniform `L^1` bound; default `10 max(|lambda|, |mu|, 1)`.
    pub l1_bound: Option<f64>,
    /// Decay ratio for [`assess_equiintegrability`].
    pub equiintegrability_ratio: f64,
}

impl Default for SequenceCheckOptions {
    fn default() -> Self {
        Self { l1_bound: None, equiintegrability_ratio: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceReport {
    pub l1_norms: Vec<f64>,
    pub residuals: Vec<f64>,
    pub objectives: Vec<f64>,
    pub fractions: Vec<f64>,
    pub dist_lambda: Vec<f64>,
    pub dist_mu: Vec<f64>,
    pub profile_thresholds: Vec<f64>,
    pub profile: Vec<Vec<f64>>,
    pub equiintegrability: EquiIntegrability,
    pub l1_bounded: bool,
    pub residual_vanishes: bool,
    pub objective_vanishes: bool,
    pub collapse: Option<PureState>,
    pub verdict: Verdict,
}

impl SequenceReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.l1_bounded && self.residual_vanishes && self.objective_vanishes
    }
}

/// Checks the hypotheses of approximate rigidity on a supplied sequence and
/// whether it collapses to a pure state.
pub fn approximate_sequence_check(
    problem: &TwoStateProblem,
    sequence: &[PeriodicField],
    options: &SequenceCheckOptions,
) -> Result<SequenceReport> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("sequence is empty".into()));
    }
    let (lambda, mu) = (problem.lambda(), problem.mu());
    let zero = vec![0.0; lambda.len()];
    let scale = euclid(lambda, &zero).max(euclid(mu, &zero)).max(1.0);
    let rows: Vec<[f64; 6]> = sequence
        .par_iter()
        .map(|f| {
            if f.grid() != problem.grid() {
                return Err(Error::InvalidGrid("sequence fields must share the problem grid".into()));
            }
            Ok([
                l1_norm(f),
                problem.spectral.residual_negative_norm(f)?,
                dist_to_states(f, lambda, mu)?,
                lambda_fraction(f, lambda, mu)?,
                state_l1_distance(f, lambda)?,
                state_l1_distance(f, mu)?,
            ])
        })
        .collect::<Result<_>>()?;
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let (l1_norms, residuals, objectives, fractions, dist_lambda, dist_mu) =
        (column(0), column(1), column(2), column(3), column(4), column(5));

    let profile_thresholds: Vec<f64> = (0..=10).map(|i| scale * f64::powi(2.0, i)).collect();
    let profile = equiintegrability_profile(sequence, &profile_thresholds)?;
    let equiintegrability = assess_equiintegrability(&profile, options.equiintegrability_ratio);

    let bound = options.l1_bound.unwrap_or(10.0 * scale);
    let l1_bounded = l1_norms.iter().all(|&x| x <= bound);
    let residual_vanishes = tends_to_zero(&residuals, 1e-10 * scale);
    let objective_vanishes = tends_to_zero(&objectives, 1e-10 * scale);
    let jump = problem.jump_norm();
    let floor = 1e-10 * jump;
    let collapse = if tends_to_zero(&dist_lambda, floor) {
        Some(PureState::Lambda)
    } else if tends_to_zero(&dist_mu, floor) {
        Some(PureState::Mu)
    } else {
        None
    };
    let verdict = if !(l1_bounded && residual_vanishes && objective_vanishes) {
        Verdict::HypothesesViolated
    } else if collapse.is_some() {
        Verdict::RigidCollapse
    } else {
        let t = problem.theta.min(1.0 - problem.theta);
        let last = dist_lambda.last().copied().unwrap_or(0.0).min(dist_mu.last().copied().unwrap_or(0.0));
        if last >= 0.5 * t * jump {
            Verdict::LaminateFound
        } else {
            Verdict::Inconclusive
        }
    };
    Ok(SequenceReport {
        l1_norms,
        residuals,
        objectives,
        fractions,
        dist_lambda,
        dist_mu,
        profile_thresholds,
        profile,
        equiintegrability,
        l1_bounded,
        residual_vanishes,
        objective_vanishes,
        collapse,
        verdict,
    })
}

/// Forcing `r = sum_beta d^beta f^beta` with `|beta| = k` and `n`-channel `f^beta`.
#[derive(Clone, Debug)]
pub struct Forcing {
    pub terms: Vec<(MultiIndex, PeriodicField)>,
}

impl Forcing {
    /// `sum_beta |f^beta|_{L^1}`.
    pub fn l1_size(&self) -> f64 {
        self.terms.iter().map(|(_, f)| l1_norm(f)).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { terms: self.terms.iter().map(|(b, f)| (b.clone(), f.scaled(s))).collect() }
    }

    /// Assembles `r` on the grid of the problem.
    pub fn rhs(&self, problem: &TwoStateProblem) -> Result<PeriodicField> {
        let sp = problem.spectral();
        let (k, n) = (sp.operator().order(), sp.operator().equations());
        let mut total = PeriodicField::zeros(problem.grid(), n);
        for (beta, f) in &self.terms {
            if beta.order() != k || beta.dim() != problem.grid().dim() {
                return Err(Error::InvalidArgument(format!("forcing index {beta} must have order {k}")));
            }
            if f.grid() != problem.grid() || f.channels() != n {
                return Err(Error::DimensionMismatch { expected: n, got: f.channels() });
            }
            let part = sp.derivative_spectrum(beta, f.spectrum()).to_field();
            total = total.lin_comb(1.0, &part, 1.0)?;
        }
        Ok(total)
    }
}

/// Smooth seeded forcing profile with `|f^beta|_{L^1} = 1` for every `beta`
/// of order `k`; built from random modes with `|m|_inf <= 3`.
pub fn unit_forcing(problem: &TwoStateProblem, seed: u64) -> Result<Forcing> {
    let grid = problem.grid();
    let (k, n) = (problem.operator().order(), problem.operator().equations());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for beta in MultiIndex::all_of_order(grid.dim(), k) {
        let mut spec = crate::fields::Spectrum::zeros(grid, n);
        for idx in 0..grid.len() {
            let m = grid.frequency(idx);
            let j = grid.conjugate_index(idx);
            if m.iter().any(|x| x.abs() > 3) || j < idx || m.iter().all(|&x| x == 0) {
                continue;
            }
            for c in 0..n {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                let z = num_complex::Complex64::new(re, if j == idx { 0.0 } else { im });
                spec.set(c, idx, z);
                spec.set(c, j, z.conj());
            }
        }
        let f = spec.to_field();
        let size = l1_norm(&f);
        terms.push((beta, f.scaled(1.0 / size)));
    }
    Ok(Forcing { terms })
}

#[derive(Clone, Debug)]
pub struct VanishingRhsReport {
    pub forcing_l1: Vec<f64>,
    pub forcing_vanishes: bool,
    pub runs: Vec<ExperimentReport>,
    pub sequence: SequenceReport,
    /// `hypotheses-violated` if the forcing does not tend to zero, else the
    /// verdict of the last run.
    pub verdict: Verdict,
}

/// For each forcing `f_j`, runs alternating projection onto
/// `{A v = r_j, mean fixed}` (kernel projection plus the minimum-norm preimage
/// of `r_j`) from `init`, then checks the sequence of final fields.
pub fn vanishing_rhs_experiment(
    problem: &TwoStateProblem,
    forcing: &[Forcing],
    init: &PeriodicField,
    iterations: usize,
    thresholds: &Thresholds,
) -> Result<VanishingRhsReport> {
    if forcing.is_empty() {
        return Err(Error::InvalidArgument("forcing sequence is empty".into()));
    }
    let forcing_l1: Vec<f64> = forcing.iter().map(Forcing::l1_size).collect();
    let runs: Vec<ExperimentReport> = forcing
        .par_iter()
        .map(|f| {
            let r = f.rhs(problem)?;
            let correction = problem.spectral.min_norm_preimage(&r)?;
            run_inner(problem, init, iterations, thresholds, Some(&correction), "forced")
        })
        .collect::<Result<_>>()?;
    let finals: Vec<PeriodicField> = runs.iter().map(|r| r.final_field.clone()).collect();
    let sequence = approximate_sequence_check(problem, &finals, &SequenceCheckOptions::default())?;
    let forcing_vanishes = tends_to_zero(&forcing_l1, 0.0);
    let verdict = if forcing_vanishes {
        runs.last().expect("non-empty").verdict
    } else {
        Verdict::HypothesesViolated
    };
    Ok(VanishingRhsReport { forcing_l1, forcing_vanishes, runs, sequence, verdict })
}

/// Threshold settings of an experiment config.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    #[serde(default = "default_eps")]
    pub eps_low_relative: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS_LOW_RELATIVE
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { eps_low_relative: DEFAULT_EPS_LOW_RELATIVE, delta: DEFAULT_DELTA }
    }
}

/// Experiment description read from TOML; unknown keys are rejected.
///
/// ```toml
/// operator = "div:2x2"          # or operator_file = "op.txt"
/// lambda = [1, 0, 0, 1]
/// mu = [-1, 0, 0, -1]
/// theta = 0.5
/// n = 63
/// iterations = 500
/// seeds = [1, 2, 3]
/// init = "laminate-noise"       # or "noise"
/// noise_amplitude = 0.1         # relative to |lambda - mu|
/// output_dir = "out"
///
/// [thresholds]
/// eps_low_relative = 1e-4
/// delta = 0.1
/// ```
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: Option<String>,
    pub operator_file: Option<PathBuf>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub theta: f64,
    pub n: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default = "default_amplitude")]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    pub output_dir: PathBuf,
}

fn default_amplitude() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::Parse { line, message: e.message().to_string() }
        })
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.operator_file {
            if p.is_relative() {
                cfg.operator_file = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn resolve_operator(&self) -> Result<DifferentialOperator> {
        match (&self.operator, &self.operator_file) {
            (Some(name), None) => catalog(parse_catalog_name(name)?),
            (None, Some(path)) => parse_operator(&std::fs::read_to_string(path)?),
            _ => Err(Error::Parse { line: 0, message: "exactly one of operator or operator_file is required".into() }),
        }
    }

    pub fn problem(&self) -> Result<TwoStateProblem> {
        let op = self.resolve_operator()?;
        let grid = PeriodicGrid::new(op.dim(), self.n)?;
        let seed = self.seeds.first().copied().unwrap_or(0);
        TwoStateProblem::new(op, self.lambda.clone(), self.mu.clone(), self.theta, grid, seed)
    }

    /// Runs every seed; reports follow the order of `seeds`.
    pub fn run(&self) -> Result<Vec<ExperimentReport>> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds list is empty".into()));
        }
        let problem = self.problem()?;
        let thresholds = Thresholds {
            eps_low: self.thresholds.eps_low_relative * problem.jump_norm(),
            delta: self.thresholds.delta,
        };
        run_seeds(&problem, self.init, self.noise_amplitude, &self.seeds, self.iterations, &thresholds)
    }
}
