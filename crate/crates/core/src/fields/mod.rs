//! Odd periodic grids on the unit torus `[0,1)^d`, real multi-channel fields
//! and their Fourier coefficients.
//!
//! Fourier coefficients follow `v(x) = sum_m v_hat(m) exp(2 pi i m.x)` with
//! integer frequencies `m` in `{-(N-1)/2, ..., (N-1)/2}^d`. Integrals are
//! means over samples, so the torus has measure one.

mod fft;
mod io;
mod laminate;
mod norms;

use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use io::{field_to_csv, read_dump, write_dump, DUMP_MAGIC, DUMP_VERSION};
pub use laminate::{laminate_field, lambda_fraction};
pub use norms::{
    assess_equiintegrability, convergence_in_measure_metric, dist_field, dist_to_states,
    equiintegrability_profile, l1_norm, l2_norm, linf_norm, sandwich_violations, sobolev_norm, state_l1_distance,
    weak_l1_quasinorm, EquiIntegrability,
};

/// `N^d` samples of the torus with `N` odd.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("samples per axis must be odd and >= 3, got {n}")));
        }
        match (n as u64).checked_pow(dim as u32) {
            Some(total) if total <= (1u64 << 31) => Ok(Self { dim, n }),
            _ => Err(Error::InvalidGrid(format!("{n}^{dim} points is too large"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Samples per axis `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of points `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Largest representable frequency `(N-1)/2`.
    pub fn max_frequency(&self) -> i64 {
        (self.n as i64 - 1) / 2
    }

    /// Integer coordinates of a linear index (axis 0 slowest).
    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            out[a] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Position of a sample in `[0,1)^d`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx).into_iter().map(|i| i as f64 / self.n as f64).collect()
    }

    /// Centred frequency for an FFT bin along one axis.
    pub fn bin_frequency(&self, bin: usize) -> i64 {
        let b = bin as i64;
        if b <= self.max_frequency() {
            b
        } else {
            b - self.n as i64
        }
    }

    /// Frequency vector of a linear spectral index.
    pub fn frequency(&self, idx: usize) -> Vec<i64> {
        self.coords(idx).into_iter().map(|b| self.bin_frequency(b)).collect()
    }

    /// Linear spectral index of `m`, if representable.
    pub fn frequency_index(&self, m: &[i64]) -> Option<usize> {
        if m.len() != self.dim || m.iter().any(|x| x.abs() > self.max_frequency()) {
            return None;
        }
        Some(m.iter().fold(0usize, |acc, &x| acc * self.n + x.rem_euclid(self.n as i64) as usize))
    }

    /// Index of `-m` for the frequency stored at `idx`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let mut out = 0;
        for b in self.coords(idx) {
            out = out * self.n + (self.n - b) % self.n;
        }
        out
    }

    /// Flat table of all frequencies, `dim` entries per spectral index.
    pub fn frequency_table(&self) -> Vec<i64> {
        (0..self.len()).flat_map(|idx| self.frequency(idx)).collect()
    }
}

/// Fourier coefficients of an `ell`-channel field; channel-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    grid: PeriodicGrid,
    channels: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: PeriodicGrid, channels: usize) -> Self {
        Self { grid, channels, data: vec![Complex64::new(0.0, 0.0); grid.len() * channels] }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn get(&self, c: usize, idx: usize) -> Complex64 {
        self.data[c * self.grid.len() + idx]
    }

    pub fn set(&mut self, c: usize, idx: usize, z: Complex64) {
        let len = self.grid.len();
        self.data[c * len + idx] = z;
    }

    /// Coefficient vector across channels at one frequency.
    pub fn at(&self, idx: usize) -> Vec<Complex64> {
        (0..self.channels).map(|c| self.get(c, idx)).collect()
    }

    pub fn set_at(&mut self, idx: usize, values: &[Complex64]) {
        for (c, &z) in values.iter().enumerate() {
            self.set(c, idx, z);
        }
    }

    /// `(sum_m |v_hat(m)|^2)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest `|v_hat(-m) - conj(v_hat(m))|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.data.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        let mut worst: f64 = 0.0;
        for c in 0..self.channels {
            let ch = self.channel(c);
            for idx in 0..self.grid.len() {
                let j = self.grid.conjugate_index(idx);
                worst = worst.max((ch[j] - ch[idx].conj()).norm());
            }
        }
        worst / scale
    }

    /// Synthesises the real field; the imaginary part is dropped.
    pub fn to_field(&self) -> PeriodicField {
        self.to_field_with_residue().0
    }

    /// As [`to_field`](Self::to_field), also returning the largest imaginary
    /// part relative to the largest real sample.
    pub fn to_field_with_residue(&self) -> (PeriodicField, f64) {
        let (grid, ell) = (self.grid, self.channels);
        let mut data = self.data.clone();
        data.par_chunks_mut(grid.len()).for_each(|ch| fft::transform(ch, grid.dim(), grid.n(), true));
        let mut values = vec![0.0; grid.len() * ell];
        let (mut max_re, mut max_im) = (0.0f64, 0.0f64);
        for c in 0..ell {
            for idx in 0..grid.len() {
                let z = data[c * grid.len() + idx];
                values[idx * ell + c] = z.re;
                max_re = max_re.max(z.re.abs());
                max_im = max_im.max(z.im.abs());
            }
        }
        let residue = if max_re > 0.0 { max_im / max_re } else { max_im };
        (PeriodicField::from_parts(grid, ell, values), residue)
    }
}

/// Real `ell`-channel samples on a periodic grid, point-major
/// (`values[idx * ell + c]`), with a lazily computed spectrum.
#[derive(Clone, Debug)]
pub struct PeriodicField {
    grid: PeriodicGrid,
    channels: usize,
    values: Vec<f64>,
    spectrum: OnceLock<Spectrum>,
}

impl PartialEq for PeriodicField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.channels == other.channels && self.values == other.values
    }
}

impl PeriodicField {
    pub fn new(grid: PeriodicGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("field needs at least one channel".into()));
        }
        if values.len() != grid.len() * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} points x {channels} channels",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self::from_parts(grid, channels, values))
    }

    pub(crate) fn from_parts(grid: PeriodicGrid, channels: usize, values: Vec<f64>) -> Self {
        Self { grid, channels, values, spectrum: OnceLock::new() }
    }

    pub fn zeros(grid: PeriodicGrid, channels: usize) -> Self {
        Self::from_parts(grid, channels, vec![0.0; grid.len() * channels])
    }

    /// Field equal to `value` everywhere.
    pub fn constant(grid: PeriodicGrid, value: &[f64]) -> Self {
        let values = value.iter().copied().cycle().take(grid.len() * value.len()).collect();
        Self::from_parts(grid, value.len(), values)
    }

    /// Samples `f(x)` at every grid point `x` in `[0,1)^d`.
    pub fn from_fn(grid: PeriodicGrid, channels: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.len() * channels];
        for (idx, out) in values.chunks_mut(channels).enumerate() {
            f(&grid.point(idx), out);
        }
        Self::from_parts(grid, channels, values)
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable samples; drops the cached spectrum.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.spectrum.take();
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sample(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn samples(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.channels)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples().map(|s| s[c]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.channels];
        for s in self.samples() {
            acc.iter_mut().zip(s).for_each(|(a, x)| *a += x);
        }
        let inv = 1.0 / self.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// Euclidean norm across channels at every sample.
    pub fn pointwise_norms(&self) -> Vec<f64> {
        self.samples().map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Fourier coefficients, computed on first use.
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            let (grid, ell) = (self.grid, self.channels);
            let mut data = vec![Complex64::new(0.0, 0.0); grid.len() * ell];
            for (idx, s) in self.samples().enumerate() {
                for (c, &x) in s.iter().enumerate() {
                    data[c * grid.len() + idx] = Complex64::new(x, 0.0);
                }
            }
            data.par_chunks_mut(grid.len()).for_each(|ch| fft::transform(ch, grid.dim(), grid.n(), false));
            Spectrum { grid, channels: ell, data }
        })
    }

    pub fn has_cached_spectrum(&self) -> bool {
        self.spectrum.get().is_some()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidGrid("fields live on different grids".into()));
        }
        if self.channels != other.channels {
            return Err(Error::DimensionMismatch { expected: self.channels, got: other.channels });
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Self::from_parts(self.grid, self.channels, values))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_parts(self.grid, self.channels, self.values.iter().map(|x| a * x).collect())
    }

    /// Adds `shift` to every sample.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.channels {
            return Err(Error::DimensionMismatch { expected: self.channels, got: shift.len() });
        }
        let mut values = self.values.clone();
        for s in values.chunks_mut(self.channels) {
            s.iter_mut().zip(shift).for_each(|(x, y)| *x += y);
        }
        Ok(Self::from_parts(self.grid, self.channels, values))
    }

    /// Pointwise product with a scalar field `phi`.
    pub fn multiplied_by(&self, phi: &Self) -> Result<Self> {
        if self.grid != phi.grid {
            return Err(Error::InvalidGrid("fields live on different grids".into()));
        }
        if phi.channels != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: phi.channels });
        }
        let mut values = self.values.clone();
        for (s, &p) in values.chunks_mut(self.channels).zip(&phi.values) {
            s.iter_mut().for_each(|x| *x *= p);
        }
        Ok(Self::from_parts(self.grid, self.channels, values))
    }

    /// Scalar field times a constant vector: `phi(x) * v`.
    pub fn outer(phi: &Self, v: &[f64]) -> Result<Self> {
        if phi.channels != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: phi.channels });
        }
        let values = phi.values.iter().flat_map(|&p| v.iter().map(move |x| p * x)).collect();
        Ok(Self::from_parts(phi.grid, v.len(), values))
    }

    /// Largest absolute sample difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: PeriodicGrid, ell: usize, seed: u64) -> PeriodicField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len() * ell).map(|_| rng.random_range(-1.0..1.0)).collect();
        PeriodicField::new(grid, ell, values).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(PeriodicGrid::new(2, 4).is_err());
        assert!(PeriodicGrid::new(2, 1).is_err());
        assert!(PeriodicGrid::new(0, 5).is_err());
        let g = PeriodicGrid::new(3, 5).unwrap();
        assert_eq!(g.len(), 125);
        assert_eq!(g.coords(7), vec![0, 1, 2]);
        assert_eq!(g.frequency(g.frequency_index(&[-2, 1, 0]).unwrap()), vec![-2, 1, 0]);
        assert_eq!(g.frequency_index(&[3, 0, 0]), None);
        let idx = g.frequency_index(&[-2, 1, 0]).unwrap();
        assert_eq!(g.frequency(g.conjugate_index(idx)), vec![2, -1, 0]);
    }

    #[test]
    fn round_trip_and_plancherel() {
        for (dim, n) in [(1, 7), (2, 15), (3, 5)] {
            let grid = PeriodicGrid::new(dim, n).unwrap();
            let f = random_field(grid, 3, 42 + n as u64);
            let (back, residue) = f.spectrum().to_field_with_residue();
            let scale = f.max_abs();
            assert!(back.max_abs_diff(&f).unwrap() <= 1e-12 * scale);
            assert!(residue <= 1e-12);
            assert!(f.spectrum().hermitian_defect() <= 1e-12);
            let l2 = l2_norm(&f);
            assert!((l2 - f.spectrum().l2_norm()).abs() <= 1e-12 * l2);
        }
    }

    #[test]
    fn mutation_invalidates_spectrum() {
        let grid = PeriodicGrid::new(2, 5).unwrap();
        let mut f = PeriodicField::constant(grid, &[1.0]);
        assert!((f.spectrum().get(0, 0).re - 1.0).abs() < 1e-15);
        f.values_mut()[0] = 26.0;
        assert!(!f.has_cached_spectrum());
        assert!((f.spectrum().get(0, 0).re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn shape_checks() {
        let grid = PeriodicGrid::new(2, 5).unwrap();
        assert!(PeriodicField::new(grid, 2, vec![0.0; 3]).is_err());
        let a = PeriodicField::zeros(grid, 2);
        let b = PeriodicField::zeros(grid, 3);
        assert!(a.lin_comb(1.0, &b, 1.0).is_err());
        let other = PeriodicField::zeros(PeriodicGrid::new(2, 7).unwrap(), 2);
        assert!(a.lin_comb(1.0, &other, 1.0).is_err());
    }
}
