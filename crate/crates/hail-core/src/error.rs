//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("linear solve failed: {0}")]
    SolverFailure(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("prototype bank has no general prototypes")]
    NoPrototypes,

    #[error("prototype bank has no species prototypes")]
    NoSpeciesPrototypes,

    #[error("no species learned yet")]
    NoSpeciesLearned,

    #[error("unknown species {0}")]
    UnknownSpecies(u64),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    BadFormat(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
