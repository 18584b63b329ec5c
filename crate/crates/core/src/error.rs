//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector failed a structural invariant (a `-inf` row, a
    /// non-finite coordinate, a non-square entry grid, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// A model document violated the schema or a model invariant.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Operand dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A coupling loop ran for `cap` steps without reaching a rank-1
    /// product. Either the model lacks the memory loss property or the
    /// cap is too small.
    #[error("coupling cap exceeded after {cap} steps; model may lack the memory loss property")]
    CapExceeded { cap: usize },

    /// Invalid argument to an estimator or simulation routine.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
