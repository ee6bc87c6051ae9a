//! Numerical laboratory for two-state differential inclusions under a
//! constant-coefficient linear constraint `A v = 0`.
//!
//! The crate is organised bottom-up:
//!
//! * [`operator`]: multi-indices, differential operators, their symbols and
//!   a small catalog (`curl`, `div`, `curlcurl`), plus a text format.
//! * [`wavecone`]: wave-cone membership by minimising `|A(xi) v|` over the
//!   unit sphere.
//! * [`fields`]: odd periodic grids, real multi-channel fields, spectra and
//!   the norms used by the rigidity statements.
//! * [`spectral`]: operators and Fourier multipliers applied on the torus,
//!   kernel projection, commutators.
//! * [`lab`]: alternating-projection experiments and sequence diagnostics.
//! * [`cli`]: the `wclab` command-line front end.
//!
//! Matrix-valued fields are stored row-major: channel `i * d + j` holds
//! `v_{ij}`. Symmetric fields use `(S11, S12, S22)` in 2D and
//! `(S11, S12, S13, S22, S23, S33)` in 3D.

pub mod cli;
pub mod error;
pub mod fields;
pub mod lab;
pub mod operator;
pub mod spectral;
pub mod wavecone;

pub use error::{Error, Result};
pub use fields::{PeriodicField, PeriodicGrid, Spectrum};
pub use lab::{ExperimentReport, Thresholds, TwoStateProblem, Verdict};
pub use operator::{DifferentialOperator, MultiIndex};
pub use spectral::SpectralOperator;
pub use wavecone::SphereSearchResult;
