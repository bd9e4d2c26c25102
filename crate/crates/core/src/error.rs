//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the library. Variants mirror the failure modes of the
/// individual operations; none of them is used for control flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// `v` is not a common left eigenvector of the mean matrix.
    #[error("left eigenvector mismatch: {0}")]
    EigenMismatch(String),
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    DomainError(String),
    /// The shift accumulation vanishes where a positive one is required.
    #[error("degenerate shift: {0}")]
    DegenerateShift(String),
    /// Rejection sampling of an environment letter failed repeatedly.
    #[error("rejection sampling exhausted after {attempts} attempts: {reason}")]
    RejectionExhausted { attempts: usize, reason: String },
    /// The requested parametric family is not supported.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),
    /// The pair `(M, w)` does not define a probability generating function.
    #[error("invalid linear-fractional law: {0}")]
    InvalidLaw(String),
    /// An index argument is out of range.
    #[error("index {index} out of range (maximum {max})")]
    IndexError { index: usize, max: usize },
    /// A conditioned-walk expectation was requested without a renewal table.
    #[error("a renewal table is required for this estimator")]
    MissingRenewalTable,
    /// The conditioning event has zero quenched probability.
    #[error("conditioning event has zero mass")]
    ZeroMassCondition,
    /// A truncated series did not reach its configured tolerance.
    #[error("tail not converged: {0}")]
    TailNotConverged(String),
    /// The model is in a different regime than the estimator requires.
    #[error("regime mismatch: expected {expected}, found {found}")]
    RegimeMismatch { expected: String, found: String },
    /// Invalid configuration document.
    #[error("configuration error: {0}")]
    ConfigError(String),
    /// File system or serialization failure.
    #[error("i/o error: {0}")]
    IoError(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoError(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::IoError(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::IoError(e.to_string())
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
