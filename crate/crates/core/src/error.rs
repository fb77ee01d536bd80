//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by configuration validation, channel generation and the
/// numerical solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Mismatched matrix/vector dimensions between inputs.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An iterative routine left the representable range or failed to make
    /// progress (non-finite objective, penalty underflow, ...).
    #[error("numerical failure in {context}: {detail}")]
    NumericalFailure { context: &'static str, detail: String },

    /// Configuration file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand used by the solvers when a guard trips.
    pub(crate) fn numerical(context: &'static str, detail: impl Into<String>) -> Self {
        Error::NumericalFailure { context, detail: detail.into() }
    }
}
