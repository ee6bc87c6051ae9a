use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("operator has no terms")]
    EmptyOperator,

    #[error("operator has no nonzero term of top order")]
    NoTopOrderTerm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input vector is zero")]
    ZeroVector,

    #[error("state difference lies in wave cone (gap {gap:e})")]
    InWaveCone { gap: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite values at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("forcing is not in the symbol range at frequency {frequency:?} (relative defect {defect:e})")]
    UnsolvableForcing { frequency: Vec<i64>, defect: f64 },

    #[error("bad field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
