//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by parsing, model construction, filtering and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (CSV, config or prior files).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally valid input that violates a contract (dimensions,
    /// ranges, stationarity, duplicate keys, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A parameter point at which the model degenerates numerically,
    /// e.g. a singular innovation covariance. Samplers treat this as a
    /// rejected point rather than a fatal condition.
    #[error("degenerate parameter point: {0}")]
    Degenerate(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// Filesystem failure while reading inputs or writing run outputs.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI contract: 2 for input errors,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Invalid(_) | Error::Io(_) => 2,
            Error::Degenerate(_) | Error::NonConvergence(_) => 3,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
