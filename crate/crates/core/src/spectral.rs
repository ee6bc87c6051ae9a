//! Operators and Fourier multipliers applied to periodic fields.
//!
//! A [`SpectralOperator`] binds a [`DifferentialOperator`] to a grid and caches
//! the symbol and the kernel projection at every representable frequency.
//! Multipliers built from a state `lambda` use the top-order symbol
//! `A^k(m) = (2 pi i)^k sum_{|alpha|=k} A_alpha m^alpha`:
//!
//! * `T`, `T3`: divide by `1 + |A^k(m) lambda|^2`;
//! * `T1`: `conj(A^k lambda) . A^k z_hat / (1 + |A^k lambda|^2)`;
//! * `T2`, `T4`, `T5`: the same pairing applied to a commutator, to the
//!   lower-order part, or to `d^beta f`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{l2_norm, PeriodicField, PeriodicGrid, Spectrum};
use crate::operator::{two_pi_i_pow, DifferentialOperator, MultiIndex};

/// Singular values below this fraction of the largest one count as kernel.
pub const KERNEL_RANK_TOL: f64 = 1e-10;
const SIGMA_FLOOR: f64 = 1e-300;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Per-frequency SVD data of one symbol.
#[derive(Clone, Debug)]
pub struct KernelEntry {
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub threshold: f64,
    /// Orthonormal kernel basis, `ell x (ell - rank)`.
    pub kernel: DMatrix<Complex64>,
    /// Orthogonal projection onto the kernel.
    pub projection: DMatrix<Complex64>,
}

impl KernelEntry {
    fn from_symbol(symbol: &DMatrix<Complex64>) -> Self {
        let ell = symbol.ncols();
        let rows = symbol.nrows().max(ell);
        let mut padded = DMatrix::from_element(rows, ell, ZERO);
        padded.view_mut((0, 0), (symbol.nrows(), ell)).copy_from(symbol);
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
        let largest = sigma.iter().copied().fold(0.0, f64::max);
        let threshold = KERNEL_RANK_TOL * largest.max(SIGMA_FLOOR);
        let kernel_rows: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] < threshold).collect();
        let mut kernel = DMatrix::from_element(ell, kernel_rows.len(), ZERO);
        for (col, &i) in kernel_rows.iter().enumerate() {
            for c in 0..ell {
                kernel[(c, col)] = v_t[(i, c)].conj();
            }
        }
        let p = &kernel * kernel.adjoint();
        let projection = (&p + p.adjoint()) * Complex64::new(0.5, 0.0);
        let mut singular_values = sigma;
        singular_values.sort_by(|a, b| b.total_cmp(a));
        Self { singular_values, rank: ell - kernel_rows.len(), threshold, kernel, projection }
    }

    fn conjugated(&self) -> Self {
        Self {
            singular_values: self.singular_values.clone(),
            rank: self.rank,
            threshold: self.threshold,
            kernel: self.kernel.map(|z| z.conj()),
            projection: self.projection.map(|z| z.conj()),
        }
    }
}

/// Kernel data for every frequency of a grid. Entries at `-m` are exact
/// conjugates of those at `m`.
#[derive(Clone, Debug)]
pub struct FrequencyKernelCache {
    entries: Vec<KernelEntry>,
}

impl FrequencyKernelCache {
    fn build(grid: PeriodicGrid, symbols: &[DMatrix<Complex64>]) -> Self {
        let canonical: Vec<usize> = (0..grid.len()).filter(|&i| i <= grid.conjugate_index(i)).collect();
        let computed: Vec<KernelEntry> =
            canonical.par_iter().map(|&i| KernelEntry::from_symbol(&symbols[i])).collect();
        let mut slots: Vec<Option<KernelEntry>> = vec![None; grid.len()];
        for (&i, entry) in canonical.iter().zip(computed) {
            let j = grid.conjugate_index(i);
            if j != i {
                slots[j] = Some(entry.conjugated());
            }
            slots[i] = Some(entry);
        }
        Self { entries: slots.into_iter().map(|e| e.expect("every frequency covered")).collect() }
    }

    pub fn entry(&self, idx: usize) -> &KernelEntry {
        &self.entries[idx]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How pointwise products are formed inside the commutator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProductMode {
    /// Sample-space product on the working grid.
    #[default]
    Aliased,
    /// Product on a zero-padded grid with `M >= 3(N-1)/2 + 1`, truncated back.
    Dealiased,
}

/// Result of [`SpectralOperator::commutator_order_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct OrderProbe {
    pub frequencies: Vec<u32>,
    pub commutator_norms: Vec<f64>,
    pub operator_norms: Vec<f64>,
    /// `None` when the commutator vanishes identically.
    pub commutator_slope: Option<f64>,
    pub operator_slope: f64,
    pub degenerate: bool,
}

/// A differential operator bound to a grid, with cached symbols.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    op: DifferentialOperator,
    grid: PeriodicGrid,
    frequencies: Vec<i64>,
    symbols: Vec<DMatrix<Complex64>>,
    principal: Option<Vec<DMatrix<Complex64>>>,
    cache: FrequencyKernelCache,
}

fn sobolev_weight(m: &[i64]) -> f64 {
    1.0 + 4.0 * PI * PI * m.iter().map(|&x| (x * x) as f64).sum::<f64>()
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn pad_spectrum(spec: &Spectrum, target: PeriodicGrid) -> Spectrum {
    let source = spec.grid();
    let mut out = Spectrum::zeros(target, spec.channels());
    for idx in 0..source.len() {
        let j = target.frequency_index(&source.frequency(idx)).expect("target grid is finer");
        for c in 0..spec.channels() {
            out.set(c, j, spec.get(c, idx));
        }
    }
    out
}

fn truncate_spectrum(spec: &Spectrum, target: PeriodicGrid) -> Spectrum {
    let mut out = Spectrum::zeros(target, spec.channels());
    let source = spec.grid();
    for idx in 0..target.len() {
        let j = source.frequency_index(&target.frequency(idx)).expect("source grid is finer");
        for c in 0..spec.channels() {
            out.set(c, idx, spec.get(c, j));
        }
    }
    out
}

impl SpectralOperator {
    pub fn new(op: DifferentialOperator, grid: PeriodicGrid) -> Result<Self> {
        if op.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), got: grid.dim() });
        }
        let frequencies = grid.frequency_table();
        let d = grid.dim();
        let symbols: Vec<DMatrix<Complex64>> =
            frequencies.par_chunks(d).map(|m| op.full_symbol_int(m)).collect();
        let principal = if op.is_homogeneous() {
            None
        } else {
            Some(frequencies.par_chunks(d).map(|m| op.principal_full_symbol_int(m)).collect())
        };
        let cache = FrequencyKernelCache::build(grid, &symbols);
        Ok(Self { op, grid, frequencies, symbols, principal, cache })
    }

    pub fn operator(&self) -> &DifferentialOperator {
        &self.op
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn cache(&self) -> &FrequencyKernelCache {
        &self.cache
    }

    /// Frequency vector of a spectral index.
    pub fn frequency(&self, idx: usize) -> &[i64] {
        let d = self.grid.dim();
        &self.frequencies[idx * d..(idx + 1) * d]
    }

    /// Full symbol at a spectral index.
    pub fn symbol(&self, idx: usize) -> &DMatrix<Complex64> {
        &self.symbols[idx]
    }

    /// Top-order symbol `(2 pi i)^k sum_{|alpha|=k} A_alpha m^alpha`.
    pub fn principal_symbol(&self, idx: usize) -> &DMatrix<Complex64> {
        match &self.principal {
            Some(p) => &p[idx],
            None => &self.symbols[idx],
        }
    }

    fn check_field(&self, field: &PeriodicField, channels: usize) -> Result<()> {
        if field.grid() != self.grid {
            return Err(Error::InvalidGrid(format!(
                "field grid {}^{} does not match operator grid {}^{}",
                field.grid().n(),
                field.grid().dim(),
                self.grid.n(),
                self.grid.dim()
            )));
        }
        if field.channels() != channels {
            return Err(Error::DimensionMismatch { expected: channels, got: field.channels() });
        }
        Ok(())
    }

    fn check_state(&self, lambda: &[f64]) -> Result<DVector<Complex64>> {
        if lambda.len() != self.op.channels() {
            return Err(Error::DimensionMismatch { expected: self.op.channels(), got: lambda.len() });
        }
        Ok(DVector::from_iterator(lambda.len(), lambda.iter().map(|&x| Complex64::new(x, 0.0))))
    }

    /// Builds an output spectrum frequency by frequency.
    fn map_frequencies<F>(&self, input: &Spectrum, out_channels: usize, f: F) -> Spectrum
    where
        F: Fn(usize, &[Complex64], &mut [Complex64]) + Sync,
    {
        let len = self.grid.len();
        let mut point_major = vec![ZERO; len * out_channels];
        let in_channels = input.channels();
        point_major.par_chunks_mut(out_channels).enumerate().for_each_init(
            || Vec::with_capacity(in_channels),
            |v, (idx, out)| {
                v.clear();
                v.extend((0..in_channels).map(|c| input.get(c, idx)));
                f(idx, v, out);
            },
        );
        let mut out = Spectrum::zeros(self.grid, out_channels);
        for c in 0..out_channels {
            let ch = out.channel_mut(c);
            for (idx, z) in ch.iter_mut().enumerate() {
                *z = point_major[idx * out_channels + c];
            }
        }
        out
    }

    fn symbol_times(&self, symbol: &DMatrix<Complex64>, v: &[Complex64], out: &mut [Complex64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..v.len()).map(|c| symbol[(r, c)] * v[c]).sum();
        }
    }

    /// Spectrum of `A v`.
    pub fn apply_spectrum(&self, field: &PeriodicField) -> Result<Spectrum> {
        self.check_field(field, self.op.channels())?;
        Ok(self.map_frequencies(field.spectrum(), self.op.equations(), |idx, v, out| {
            self.symbol_times(&self.symbols[idx], v, out)
        }))
    }

    /// `A v`, an `n`-channel field.
    pub fn apply(&self, field: &PeriodicField) -> Result<PeriodicField> {
        Ok(self.apply_spectrum(field)?.to_field())
    }

    /// `A^{<k} v`, the lower-order part only.
    pub fn apply_lower(&self, field: &PeriodicField) -> Result<PeriodicField> {
        self.check_field(field, self.op.channels())?;
        let spec = self.map_frequencies(field.spectrum(), self.op.equations(), |idx, v, out| {
            match &self.principal {
                Some(p) => {
                    let lower = &self.symbols[idx] - &p[idx];
                    self.symbol_times(&lower, v, out)
                }
                None => out.iter_mut().for_each(|z| *z = ZERO),
            }
        });
        Ok(spec.to_field())
    }

    /// `(sum_m (1 + 4 pi^2 |m|^2)^{-k} |A(m) v_hat(m)|^2)^{1/2}`.
    pub fn residual_negative_norm(&self, field: &PeriodicField) -> Result<f64> {
        let spec = self.apply_spectrum(field)?;
        let k = self.op.order() as i32;
        let total: f64 = (0..self.grid.len())
            .map(|idx| {
                let e: f64 = (0..spec.channels()).map(|c| spec.get(c, idx).norm_sqr()).sum();
                e * sobolev_weight(self.frequency(idx)).powi(-k)
            })
            .sum();
        Ok(total.sqrt())
    }

    /// Spectrum of the kernel projection of `v`.
    pub fn afree_project_spectrum(&self, field: &PeriodicField) -> Result<Spectrum> {
        self.check_field(field, self.op.channels())?;
        Ok(self.map_frequencies(field.spectrum(), self.op.channels(), |idx, v, out| {
            self.symbol_times(&self.cache.entry(idx).projection, v, out)
        }))
    }

    /// Projects `v_hat(m)` onto `ker A(m)` at every frequency. For homogeneous
    /// operators `P(0) = I`, so the mean is kept.
    pub fn afree_project(&self, field: &PeriodicField) -> Result<PeriodicField> {
        Ok(self.afree_project_spectrum(field)?.to_field())
    }

    fn lambda_symbols(&self, lambda: &[f64]) -> Result<Vec<DVector<Complex64>>> {
        let l = self.check_state(lambda)?;
        Ok((0..self.grid.len()).into_par_iter().map(|idx| self.principal_symbol(idx) * &l).collect())
    }

    /// Spectrum of `T` applied channelwise.
    pub fn multiplier_t_spectrum(&self, lambda: &[f64], field: &PeriodicField) -> Result<Spectrum> {
        if field.grid() != self.grid {
            return Err(Error::InvalidGrid("field grid does not match operator grid".into()));
        }
        let a = self.lambda_symbols(lambda)?;
        Ok(self.map_frequencies(field.spectrum(), field.channels(), |idx, v, out| {
            let denom = 1.0 + a[idx].norm_squared();
            out.iter_mut().zip(v).for_each(|(o, z)| *o = z / denom);
        }))
    }

    /// `T f = F^{-1}(f_hat / (1 + |A^k(m) lambda|^2))`, channelwise.
    pub fn multiplier_t(&self, lambda: &[f64], field: &PeriodicField) -> Result<PeriodicField> {
        Ok(self.multiplier_t_spectrum(lambda, field)?.to_field())
    }

    /// `T` restricted to scalar fields.
    pub fn multiplier_t3(&self, lambda: &[f64], w: &PeriodicField) -> Result<PeriodicField> {
        self.check_field(w, 1)?;
        self.multiplier_t(lambda, w)
    }

    /// Spectrum of `conj(A^k lambda) . r_hat / (1 + |A^k lambda|^2)` for an
    /// `n`-channel spectrum `r_hat`.
    fn pairing_spectrum(&self, lambda: &[f64], r: &Spectrum) -> Result<Spectrum> {
        if r.channels() != self.op.equations() {
            return Err(Error::DimensionMismatch { expected: self.op.equations(), got: r.channels() });
        }
        let a = self.lambda_symbols(lambda)?;
        Ok(self.map_frequencies(r, 1, |idx, v, out| {
            let ai = &a[idx];
            let dot: Complex64 = ai.iter().zip(v).map(|(x, y)| x.conj() * y).sum();
            out[0] = dot / (1.0 + ai.norm_squared());
        }))
    }

    /// The `T1`-style pairing applied to an `n`-channel field `r`.
    pub fn multiplier_pairing(&self, lambda: &[f64], r: &PeriodicField) -> Result<PeriodicField> {
        self.check_field(r, self.op.equations())?;
        Ok(self.pairing_spectrum(lambda, r.spectrum())?.to_field())
    }

    pub(crate) fn multiplier_t1_spectrum(&self, lambda: &[f64], z: &PeriodicField) -> Result<Spectrum> {
        self.check_field(z, self.op.channels())?;
        let az = self.map_frequencies(z.spectrum(), self.op.equations(), |idx, v, out| {
            self.symbol_times(self.principal_symbol(idx), v, out)
        });
        self.pairing_spectrum(lambda, &az)
    }

    /// `T1 z = F^{-1}(conj(A^k lambda) . A^k z_hat / (1 + |A^k lambda|^2))`.
    pub fn multiplier_t1(&self, lambda: &[f64], z: &PeriodicField) -> Result<PeriodicField> {
        Ok(self.multiplier_t1_spectrum(lambda, z)?.to_field())
    }

    /// `sup_m |conj(A^k lambda)^T A^k(m)| / (1 + |A^k lambda|^2)`, the `L^2`
    /// operator norm of `T1` on this grid.
    pub fn t1_bound(&self, lambda: &[f64]) -> Result<f64> {
        let a = self.lambda_symbols(lambda)?;
        let values: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|idx| (self.principal_symbol(idx).adjoint() * &a[idx]).norm() / (1.0 + a[idx].norm_squared()))
            .collect();
        Ok(values.into_iter().fold(0.0, f64::max))
    }

    /// `T2 u`: the pairing applied to `[A, phi] u`.
    pub fn multiplier_t2(
        &self,
        lambda: &[f64],
        phi: &PeriodicField,
        u: &PeriodicField,
        mode: ProductMode,
    ) -> Result<PeriodicField> {
        let c = self.commutator(phi, u, mode)?;
        self.multiplier_pairing(lambda, &c)
    }

    /// `T4 v`: the pairing applied to `A^{<k} v`.
    pub fn multiplier_t4(&self, lambda: &[f64], v: &PeriodicField) -> Result<PeriodicField> {
        let lower = self.apply_lower(v)?;
        self.multiplier_pairing(lambda, &lower)
    }

    /// `T5 f = F^{-1}((2 pi i)^k conj(A^k lambda) . m^beta f_hat / (1 + |A^k lambda|^2))`
    /// for an `n`-channel `f` and `|beta| = k`.
    pub fn multiplier_t5(&self, lambda: &[f64], beta: &MultiIndex, f: &PeriodicField) -> Result<PeriodicField> {
        if beta.order() != self.op.order() || beta.dim() != self.grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "beta {beta} must have order {} in dimension {}",
                self.op.order(),
                self.grid.dim()
            )));
        }
        self.check_field(f, self.op.equations())?;
        let derivative = self.derivative_spectrum(beta, f.spectrum());
        Ok(self.pairing_spectrum(lambda, &derivative)?.to_field())
    }

    /// Spectrum of `d^beta f`, channelwise.
    pub fn derivative_spectrum(&self, beta: &MultiIndex, spec: &Spectrum) -> Spectrum {
        let c = two_pi_i_pow(beta.order());
        self.map_frequencies(spec, spec.channels(), |idx, v, out| {
            let w = c * beta.monomial_int(self.frequency(idx));
            out.iter_mut().zip(v).for_each(|(o, z)| *o = w * z);
        })
    }

    fn product(&self, phi: &PeriodicField, f: &PeriodicField, mode: ProductMode) -> Result<PeriodicField> {
        match mode {
            ProductMode::Aliased => f.multiplied_by(phi),
            ProductMode::Dealiased => {
                let k = self.grid.max_frequency() as usize;
                let mut m = 3 * k + 1;
                if m.is_multiple_of(2) {
                    m += 1;
                }
                let fine = PeriodicGrid::new(self.grid.dim(), m)?;
                let phi_fine = pad_spectrum(phi.spectrum(), fine).to_field();
                let f_fine = pad_spectrum(f.spectrum(), fine).to_field();
                let prod = f_fine.multiplied_by(&phi_fine)?;
                Ok(truncate_spectrum(prod.spectrum(), self.grid).to_field())
            }
        }
    }

    /// `[A, phi] f = A(phi f) - phi A f` for a scalar `phi`.
    pub fn commutator(&self, phi: &PeriodicField, f: &PeriodicField, mode: ProductMode) -> Result<PeriodicField> {
        self.check_field(phi, 1)?;
        self.check_field(f, self.op.channels())?;
        let a_phi_f = self.apply(&self.product(phi, f, mode)?)?;
        let phi_a_f = self.product(phi, &self.apply(f)?, mode)?;
        a_phi_f.lin_comb(1.0, &phi_a_f, -1.0)
    }

    /// Regresses `log |[A, phi] f_M|` and `log |A f_M|` against `log M` for
    /// `f_M = v0 cos(2 pi M q.x)`.
    pub fn commutator_order_probe(
        &self,
        phi: &PeriodicField,
        q: &[i64],
        v0: &[f64],
        frequencies: &[u32],
        mode: ProductMode,
    ) -> Result<OrderProbe> {
        if frequencies.len() < 3 {
            return Err(Error::InvalidArgument("order probe needs at least 3 frequencies".into()));
        }
        if q.len() != self.grid.dim() || q.iter().all(|&x| x == 0) {
            return Err(Error::InvalidArgument("probe direction must be a nonzero lattice vector".into()));
        }
        self.check_state(v0)?;
        let qmax = q.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
        if let Some(&bad) = frequencies.iter().find(|&&m| m == 0 || m as u64 * qmax > self.grid.max_frequency() as u64) {
            return Err(Error::InvalidArgument(format!(
                "probe frequency {bad} along {q:?} is not representable (max {})",
                self.grid.max_frequency()
            )));
        }
        let mut commutator_norms = Vec::with_capacity(frequencies.len());
        let mut operator_norms = Vec::with_capacity(frequencies.len());
        for &m in frequencies {
            let profile = PeriodicField::from_fn(self.grid, 1, |x, out| {
                let phase: f64 = x.iter().zip(q).map(|(a, &b)| a * b as f64).sum();
                out[0] = (2.0 * PI * m as f64 * phase).cos();
            });
            let f = PeriodicField::outer(&profile, v0)?;
            commutator_norms.push(l2_norm(&self.commutator(phi, &f, mode)?));
            operator_norms.push(l2_norm(&self.apply(&f)?));
        }
        let logm: Vec<f64> = frequencies.iter().map(|&m| (m as f64).ln()).collect();
        let log_op: Vec<f64> = operator_norms.iter().map(|x| x.ln()).collect();
        let operator_slope = regression_slope(&logm, &log_op);
        let scale = operator_norms.iter().copied().fold(0.0, f64::max) * phi.max_abs().max(1.0);
        let degenerate = commutator_norms.iter().all(|&c| c <= 1e-10 * scale);
        let commutator_slope = if degenerate {
            None
        } else {
            let log_c: Vec<f64> = commutator_norms.iter().map(|x| x.ln()).collect();
            Some(regression_slope(&logm, &log_c))
        };
        Ok(OrderProbe {
            frequencies: frequencies.to_vec(),
            commutator_norms,
            operator_norms,
            commutator_slope,
            operator_slope,
            degenerate,
        })
    }

    /// Minimum-norm `u` with `A u = r`, solved per frequency with the
    /// pseudo-inverse of the full symbol.
    ///
    /// Fails with [`Error::UnsolvableForcing`] when some component of `r_hat`
    /// lies outside the range of the symbol by more than `1e-8` relative to the
    /// largest coefficient of `r_hat`.
    pub fn min_norm_preimage(&self, r: &PeriodicField) -> Result<PeriodicField> {
        self.check_field(r, self.op.equations())?;
        let spec = r.spectrum();
        let scale = (0..self.grid.len())
            .map(|idx| spec.at(idx).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let ell = self.op.channels();
        let solved: Vec<(Vec<Complex64>, f64)> = (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let rhs = DVector::from_vec(spec.at(idx));
                let s = &self.symbols[idx];
                let sigma_max = self.cache.entry(idx).singular_values.first().copied().unwrap_or(0.0);
                let eps = KERNEL_RANK_TOL * sigma_max.max(SIGMA_FLOOR);
                let pinv = s.clone().pseudo_inverse(eps).expect("eps is non-negative");
                let u = &pinv * &rhs;
                let defect = (s * &u - &rhs).norm();
                (u.iter().copied().collect::<Vec<_>>(), defect)
            })
            .collect();
        let mut out = Spectrum::zeros(self.grid, ell);
        for (idx, (u, defect)) in solved.iter().enumerate() {
            if *defect > 1e-8 * scale.max(SIGMA_FLOOR) {
                return Err(Error::UnsolvableForcing {
                    frequency: self.frequency(idx).to_vec(),
                    defect: defect / scale.max(SIGMA_FLOOR),
                });
            }
            out.set_at(idx, u);
        }
        Ok(out.to_field())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{l2_norm, laminate_field, sobolev_norm, weak_l1_quasinorm};
    use crate::operator::{catalog, CatalogEntry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(2, n).unwrap()
    }

    fn spectral(entry: CatalogEntry, n: usize) -> SpectralOperator {
        SpectralOperator::new(catalog(entry).unwrap(), grid(n)).unwrap()
    }

    fn curl(n: usize) -> SpectralOperator {
        spectral(CatalogEntry::Curl { rows: 2, dim: 2 }, n)
    }

    fn div(n: usize) -> SpectralOperator {
        spectral(CatalogEntry::Div { rows: 2, dim: 2 }, n)
    }

    fn curlcurl(n: usize) -> SpectralOperator {
        spectral(CatalogEntry::CurlCurl { dim: 2 }, n)
    }

    fn random_field(g: PeriodicGrid, ell: usize, rng: &mut ChaCha8Rng) -> PeriodicField {
        let values = (0..g.len() * ell).map(|_| rng.random_range(-1.0..1.0)).collect();
        PeriodicField::new(g, ell, values).unwrap()
    }

    fn smooth_phi(g: PeriodicGrid) -> PeriodicField {
        PeriodicField::from_fn(g, 1, |x, out| {
            out[0] = 1.0 + 0.5 * (2.0 * PI * x[0]).cos() + 0.3 * (2.0 * PI * (x[0] + x[1])).sin();
        })
    }

    #[test]
    fn cache_projection_properties() {
        for s in [curl(15), div(15), curlcurl(15)] {
            let g = s.grid();
            for idx in 0..g.len() {
                let p = &s.cache().entry(idx).projection;
                assert!((p * p - p).norm() <= 1e-12);
                assert!((p - p.adjoint()).norm() <= 1e-12);
                let pc = &s.cache().entry(g.conjugate_index(idx)).projection;
                assert!((pc - p.map(|z| z.conj())).norm() == 0.0);
                assert!((s.symbol(idx) * p).norm() <= 1e-10 * s.symbol(idx).norm().max(1.0));
            }
            let zero = g.frequency_index(&[0, 0]).unwrap();
            assert_eq!(s.cache().entry(zero).rank, 0);
        }
        // div symbol has rank 2 away from the origin
        let s = div(7);
        let idx = s.grid().frequency_index(&[1, -2]).unwrap();
        assert_eq!(s.cache().entry(idx).rank, 2);
        assert_eq!(s.cache().entry(idx).kernel.ncols(), 2);
    }

    #[test]
    fn apply_examples() {
        let s = curl(15);
        let c = PeriodicField::constant(s.grid(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(s.apply(&c).unwrap().max_abs() <= 1e-12);

        // gradient of a plane wave
        let g = s.grid();
        let grad = PeriodicField::from_fn(g, 4, |x, out| {
            let t = 2.0 * PI * (2.0 * x[0] - 3.0 * x[1]);
            let (a, b) = (0.7, -1.3);
            let d = 2.0 * PI * t.cos();
            out.copy_from_slice(&[a * 2.0 * d, a * -3.0 * d, b * 2.0 * d, b * -3.0 * d]);
        });
        assert!(s.apply(&grad).unwrap().max_abs() <= 1e-10 * grad.max_abs());

        // laminate with lambda - mu = a (x) q
        let lam = laminate_field(g, &[1.0, -1.0, 2.0, -2.0], &[0.0, 0.0, 0.0, 0.0], &[1, -1], 0.4, 1).unwrap();
        assert!(s.residual_negative_norm(&lam).unwrap() <= 1e-10 * 5.0);
    }

    #[test]
    fn residual_single_mode_and_scaling() {
        let s = div(15);
        let g = s.grid();
        let m0 = [2i64, -1];
        let v = [0.3, -0.8, 1.1, 0.5];
        let f = PeriodicField::from_fn(g, 4, |x, out| {
            let t = 2.0 * PI * (m0[0] as f64 * x[0] + m0[1] as f64 * x[1]);
            for (o, a) in out.iter_mut().zip(&v) {
                *o = 2.0 * a * t.cos();
            }
        });
        // cos = (e^{i t} + e^{-i t}) / 2: unit coefficient at +-m0
        let vc = DVector::from_iterator(4, v.iter().map(|&x| Complex64::new(x, 0.0)));
        let sym = s.operator().full_symbol_int(&m0) * vc;
        let one = sym.norm() * sobolev_weight(&m0).powf(-0.5);
        let expected = (2.0 * one * one).sqrt();
        let got = s.residual_negative_norm(&f).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
        let doubled = s.residual_negative_norm(&f.scaled(2.0)).unwrap();
        assert!((doubled - 2.0 * got).abs() <= 1e-12 * got);
    }

    #[test]
    fn projection_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [curl(15), div(31), curlcurl(15)] {
            let ell = s.operator().channels();
            for _ in 0..5 {
                let f = random_field(s.grid(), ell, &mut rng);
                let (p, residue) = s.afree_project_spectrum(&f).unwrap().to_field_with_residue();
                assert!(residue <= 1e-12);
                assert!(s.residual_negative_norm(&p).unwrap() <= 1e-10 * l2_norm(&f));
                let pp = s.afree_project(&p).unwrap();
                assert!(pp.max_abs_diff(&p).unwrap() <= 1e-12 * f.max_abs());
                for (a, b) in p.mean().iter().zip(f.mean()) {
                    assert!((a - b).abs() <= 1e-14);
                }
            }
            let c = PeriodicField::constant(s.grid(), &vec![0.25; ell]);
            assert!(s.afree_project(&c).unwrap().max_abs_diff(&c).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn multiplier_single_mode() {
        let s = curl(15);
        let g = s.grid();
        let lambda = [1.0, 0.0, 0.0, 1.0];
        let m0 = [1i64, 3];
        let w = PeriodicField::from_fn(g, 1, |x, out| {
            out[0] = (2.0 * PI * (x[0] + 3.0 * x[1])).cos();
        });
        let idx = g.frequency_index(&m0).unwrap();
        let a = s.operator().principal_full_symbol_int(&m0)
            * DVector::from_iterator(4, lambda.iter().map(|&x| Complex64::new(x, 0.0)));
        let expected = 0.5 / (1.0 + a.norm_squared());
        let out = s.multiplier_t3(&lambda, &w).unwrap();
        assert!((out.spectrum().get(0, idx).re - expected).abs() <= 1e-14);

        let c = PeriodicField::constant(g, &[2.5]);
        assert!(s.multiplier_t3(&lambda, &c).unwrap().max_abs_diff(&c).unwrap() <= 1e-14);
        let cz = PeriodicField::constant(g, &[1.0, 2.0, 3.0, 4.0]);
        assert!(s.multiplier_t1(&lambda, &cz).unwrap().max_abs() <= 1e-14);
        let zero = PeriodicField::zeros(g, 4);
        assert_eq!(weak_l1_quasinorm(&s.multiplier_t1(&lambda, &zero).unwrap()), 0.0);
    }

    #[test]
    fn t5_cases() {
        let s = div(15);
        let g = s.grid();
        let lambda = [1.0, 0.0, 0.0, 1.0];
        let beta = MultiIndex::new(vec![0, 1]).unwrap();
        assert!(s.multiplier_t5(&lambda, &beta, &PeriodicField::zeros(g, 2)).unwrap().max_abs() == 0.0);
        let c = PeriodicField::constant(g, &[1.0, -2.0]);
        assert!(s.multiplier_t5(&lambda, &beta, &c).unwrap().max_abs() <= 1e-14);
        assert!(s.multiplier_t5(&lambda, &MultiIndex::new(vec![1, 1]).unwrap(), &c).is_err());

        // single mode: f = e_0 cos(2 pi (2 x0 + x1))
        let m0 = [2i64, 1];
        let f = PeriodicField::from_fn(g, 2, |x, out| {
            out[0] = (2.0 * PI * (2.0 * x[0] + x[1])).cos();
            out[1] = 0.0;
        });
        let out = s.multiplier_t5(&lambda, &beta, &f).unwrap();
        let a = s.operator().principal_full_symbol_int(&m0)
            * DVector::from_iterator(4, lambda.iter().map(|&x| Complex64::new(x, 0.0)));
        let expected = two_pi_i_pow(1) * 1.0 * a[0].conj() * 0.5 / (1.0 + a.norm_squared());
        let got = out.spectrum().get(0, g.frequency_index(&m0).unwrap());
        assert!((got - expected).norm() <= 1e-13);
    }

    #[test]
    fn t1_bounded_multiplier() {
        let s = curl(15);
        let lambda = [1.0, 0.0, 0.0, 1.0];
        let bound = s.t1_bound(&lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let z = random_field(s.grid(), 4, &mut rng);
            let (t, residue) = s.multiplier_t1_spectrum(&lambda, &z).unwrap().to_field_with_residue();
            assert!(residue <= 1e-12);
            assert!(l2_norm(&t) <= bound * l2_norm(&z) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = curl(15);
        let g = s.grid();
        let lambda = [0.5, 1.0, -1.0, 2.0];
        let (a, b) = (random_field(g, 4, &mut rng), random_field(g, 4, &mut rng));
        let combo = a.lin_comb(2.0, &b, -0.5).unwrap();
        let check = |f: &dyn Fn(&PeriodicField) -> PeriodicField| {
            let lhs = f(&combo);
            let rhs = f(&a).lin_comb(2.0, &f(&b), -0.5).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * lhs.max_abs().max(1.0));
        };
        check(&|f| s.apply(f).unwrap());
        check(&|f| s.afree_project(f).unwrap());
        check(&|f| s.multiplier_t(&lambda, f).unwrap());
        check(&|f| s.multiplier_t1(&lambda, f).unwrap());
        let phi = smooth_phi(g);
        check(&|f| s.commutator(&phi, f, ProductMode::Aliased).unwrap());
    }

    #[test]
    fn t_decays_like_inverse_power() {
        let s = curl(127);
        let g = s.grid();
        let lambda = [1.0, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = random_field(g, 1, &mut rng);
        let out = s.multiplier_t(&lambda, &noise).unwrap();
        let (spec_in, spec_out) = (noise.spectrum(), out.spectrum());
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for j in 2..6 {
            let (lo, hi) = ((1i64 << j) as f64, (1i64 << (j + 1)) as f64);
            let (mut num, mut den, mut count) = (0.0, 0.0, 0);
            for idx in 0..g.len() {
                let r = s.frequency(idx).iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                if r >= lo && r < hi {
                    num += spec_out.get(0, idx).norm_sqr();
                    den += spec_in.get(0, idx).norm_sqr();
                    count += 1;
                }
            }
            assert!(count > 0);
            xs.push(((lo * hi)).sqrt().ln());
            ys.push(0.5 * (num / den).ln());
        }
        let slope = regression_slope(&xs, &ys);
        assert!(slope <= -2.0 + 0.2, "slope {slope}");
    }

    #[test]
    fn t3_smoothing() {
        let s = curlcurl(31);
        let g = s.grid();
        let lambda = [1.0, 0.0, 1.0];
        let k = s.operator().order() as f64;
        let a = s.lambda_symbols(&lambda).unwrap();
        let c = (0..g.len())
            .map(|idx| sobolev_weight(s.frequency(idx)).powf(k) / (1.0 + a[idx].norm_squared()))
            .fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w = random_field(g, 1, &mut rng);
            let t = s.multiplier_t3(&lambda, &w).unwrap();
            assert!(sobolev_norm(&t, 2.0 * k) <= c * sobolev_norm(&w, 0.0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn commutator_examples() {
        let s = curl(31);
        let g = s.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_field(g, 4, &mut rng);
        let constant_phi = PeriodicField::constant(g, &[1.7]);
        for mode in [ProductMode::Aliased, ProductMode::Dealiased] {
            assert!(s.commutator(&constant_phi, &f, mode).unwrap().max_abs() <= 1e-10);
        }
        let phi = smooth_phi(g);
        let c = PeriodicField::constant(g, &[1.0, -1.0, 0.5, 2.0]);
        let lhs = s.commutator(&phi, &c, ProductMode::Aliased).unwrap();
        let rhs = s.apply(&c.multiplied_by(&phi).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        let other = PeriodicField::zeros(grid(15), 1);
        assert!(s.commutator(&other, &f, ProductMode::Aliased).is_err());
    }

    #[test]
    fn dealiased_product_is_exact_for_band_limited_inputs() {
        let s = curl(15);
        let g = s.grid();
        // frequencies 5 and 6 multiply to 11 > 7, which aliases on N = 15
        let phi = PeriodicField::from_fn(g, 1, |x, out| out[0] = (2.0 * PI * 5.0 * x[0]).cos());
        let f = PeriodicField::from_fn(g, 4, |x, out| out.fill((2.0 * PI * 6.0 * x[0]).cos()));
        let d = s.product(&phi, &f, ProductMode::Dealiased).unwrap();
        let expected = PeriodicField::from_fn(g, 4, |x, out| out.fill(0.5 * (2.0 * PI * x[0]).cos()));
        assert!(d.max_abs_diff(&expected).unwrap() <= 1e-13);
        let a = s.product(&phi, &f, ProductMode::Aliased).unwrap();
        assert!(a.max_abs_diff(&expected).unwrap() > 0.1);
    }

    #[test]
    fn order_probe_examples() {
        let q = [1i64, 1];
        let ms = [2u32, 4, 8];
        let s = curl(127);
        let phi = smooth_phi(s.grid());
        let probe = s.commutator_order_probe(&phi, &q, &[1.0, 0.0, 0.0, 0.0], &ms, ProductMode::Aliased).unwrap();
        let slope = probe.commutator_slope.unwrap();
        assert!(slope.abs() <= 0.2, "curl slope {slope}");
        assert!((probe.operator_slope - 1.0).abs() <= 0.2);

        let s = curlcurl(127);
        let phi = smooth_phi(s.grid());
        let probe = s.commutator_order_probe(&phi, &q, &[1.0, 0.0, 0.0], &ms, ProductMode::Aliased).unwrap();
        assert!(probe.commutator_slope.unwrap() <= 1.2);
        assert!((probe.operator_slope - 2.0).abs() <= 0.2);

        let flat = PeriodicField::constant(s.grid(), &[3.0]);
        let probe = s.commutator_order_probe(&flat, &q, &[1.0, 0.0, 0.0], &ms, ProductMode::Aliased).unwrap();
        assert!(probe.degenerate && probe.commutator_slope.is_none());

        assert!(s.commutator_order_probe(&phi, &q, &[1.0, 0.0, 0.0], &[2, 4, 64], ProductMode::Aliased).is_err());
        assert!(s.commutator_order_probe(&phi, &q, &[1.0, 0.0, 0.0], &[2, 4], ProductMode::Aliased).is_err());
    }

    #[test]
    fn decomposition_identity() {
        // w = T1(lambda w - phi v) + T2(v) + T3(w) whenever A v = 0
        let s = curl(31);
        let g = s.grid();
        let lambda = [1.0, 0.0, 0.0, 1.0];
        let lam = laminate_field(g, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &[1, 0], 0.5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v = s.afree_project(&random_field(g, 4, &mut rng)).unwrap().lin_comb(1.0, &lam, 1.0).unwrap();
        assert!(s.residual_negative_norm(&v).unwrap() <= 1e-10);
        let phi = smooth_phi(g);
        let indicator = PeriodicField::from_fn(g, 1, |x, out| out[0] = if x[1] < 0.4 { 1.0 } else { 0.0 });
        let w = indicator.multiplied_by(&phi).unwrap();
        let lw = PeriodicField::outer(&w, &lambda).unwrap();
        let z = lw.lin_comb(1.0, &v.multiplied_by(&phi).unwrap(), -1.0).unwrap();
        let sum = s
            .multiplier_t1(&lambda, &z)
            .unwrap()
            .lin_comb(1.0, &s.multiplier_t2(&lambda, &phi, &v, ProductMode::Aliased).unwrap(), 1.0)
            .unwrap()
            .lin_comb(1.0, &s.multiplier_t3(&lambda, &w).unwrap(), 1.0)
            .unwrap();
        assert!(sum.max_abs_diff(&w).unwrap() <= 1e-10);

        // the underlying sample identity A(lambda w) = A(z) + [A, phi] v + phi A v
        let lhs = s.apply(&lw).unwrap();
        let rhs = s
            .apply(&z)
            .unwrap()
            .lin_comb(1.0, &s.commutator(&phi, &v, ProductMode::Aliased).unwrap(), 1.0)
            .unwrap()
            .lin_comb(1.0, &s.apply(&v).unwrap().multiplied_by(&phi).unwrap(), 1.0)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn min_norm_preimage_solves_forcing() {
        let s = div(15);
        let g = s.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_field(g, 4, &mut rng);
        let r = s.apply(&u).unwrap();
        let sol = s.min_norm_preimage(&r).unwrap();
        assert!(s.apply(&sol).unwrap().max_abs_diff(&r).unwrap() <= 1e-10 * r.max_abs());
        // minimum norm: orthogonal to the kernel, so projecting it gives zero
        assert!(s.afree_project(&sol).unwrap().max_abs() <= 1e-10 * sol.max_abs());
        // a constant forcing has no preimage under a homogeneous operator
        let c = PeriodicField::constant(g, &[1.0, 0.0]);
        assert!(matches!(s.min_norm_preimage(&c), Err(Error::UnsolvableForcing { .. })));
    }

    #[test]
    fn non_homogeneous_mean_is_projected() {
        let mut terms: Vec<(MultiIndex, DMatrix<f64>)> = catalog(CatalogEntry::Div { rows: 1, dim: 2 })
            .unwrap()
            .terms()
            .map(|(a, m)| (a.clone(), m.clone()))
            .collect();
        terms.push((MultiIndex::zero(2), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])));
        let op = DifferentialOperator::new(2, 2, 1, terms, None).unwrap();
        let s = SpectralOperator::new(op, grid(15)).unwrap();
        let c = PeriodicField::constant(s.grid(), &[1.0, 1.0]);
        let p = s.afree_project(&c).unwrap();
        assert!(p.max_abs_diff(&PeriodicField::constant(s.grid(), &[0.0, 1.0])).unwrap() <= 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_field(s.grid(), 2, &mut rng);
        let t4 = s.multiplier_t4(&[1.0, 0.0], &v).unwrap();
        assert!(t4.max_abs() > 0.0);
        let hom = div(15);
        let v4 = random_field(hom.grid(), 4, &mut rng);
        assert_eq!(hom.multiplier_t4(&[1.0, 0.0, 0.0, 1.0], &v4).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn weak_l1_ratio_is_finite() {
        let s = curl(15);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let z = random_field(s.grid(), 4, &mut rng);
        let t = s.multiplier_t1(&[1.0, 0.0, 0.0, 1.0], &z).unwrap();
        let ratio = weak_l1_quasinorm(&t) / crate::fields::l1_norm(&z);
        assert!(ratio.is_finite() && ratio > 0.0);
    }
}
