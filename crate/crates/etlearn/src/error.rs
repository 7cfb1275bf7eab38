//! Crate-wide error type.

use std::fmt;

/// Errors produced by the numerics, estimators, controllers, and the
/// simulation/CLI layers.
#[derive(Debug)]
pub enum Error {
    /// Matrix or vector dimensions do not match what the operation requires.
    DimensionMismatch(String),
    /// A covariance matrix that must be positive definite failed its
    /// Cholesky factorization. Trigger evaluation and Mahalanobis distances
    /// are undefined in this case and callers must not paper over it.
    SingularCovariance(String),
    /// The innovation covariance is not invertible; indicates a
    /// misconfigured process noise.
    DegenerateNoise(String),
    /// Batch least squares received data whose stacked regressor is rank
    /// deficient.
    NotPersistentlyExciting { rank: usize, required: usize },
    /// The supplied model admits no stabilizing controller.
    Unstabilizable,
    /// A scalar argument is outside its admissible range.
    InvalidArgument(String),
    /// A computation produced a non-finite value.
    NonFinite(String),
    /// Scenario or configuration validation failure; the message names the
    /// offending field.
    Config(String),
    /// A scenario run failed at the given step.
    Runtime { step: usize, message: String },
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::SingularCovariance(msg) => write!(f, "singular covariance: {msg}"),
            Error::DegenerateNoise(msg) => write!(f, "degenerate noise configuration: {msg}"),
            Error::NotPersistentlyExciting { rank, required } => write!(
                f,
                "data not persistently exciting: stacked regressor has rank {rank}, need {required}"
            ),
            Error::Unstabilizable => write!(f, "model is not stabilizable"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite result: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Runtime { step, message } => write!(f, "runtime failure at step {step}: {message}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
