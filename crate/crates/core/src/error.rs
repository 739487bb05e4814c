use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibraError {
    /// An argument lies outside the domain of the operation (degree out of
    /// range, non-positive exponent, wrong dimension ordering, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    /// A metric matrix failed the symmetric positive-definite check.
    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("invalid complex structure: {0}")]
    InvalidComplexStructure(String),

    /// A numerical routine failed (e.g. a spectrum came out clearly negative).
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CalibraError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CalibraError::Domain(msg.into())
    }

    pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Self {
        CalibraError::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CalibraError>;
