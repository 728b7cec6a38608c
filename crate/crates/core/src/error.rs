use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("regularization must be > 0 (got {0}); use the hard transform for eps = 0")]
    NonPositiveEpsilon(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("atoms {0} and {1} coincide")]
    DuplicateAtoms(usize, usize),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("solver already performed t_max = {0} steps")]
    Exhausted(usize),
    #[error("{0}")]
    Degenerate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
