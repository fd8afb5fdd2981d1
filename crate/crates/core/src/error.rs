//! Crate-wide error type.

use thiserror::Error;

use crate::io::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or preconditions supplied by the caller.
    Usage,
    /// Malformed, missing or misaligned input data.
    Data,
    /// A numerical routine could not produce a trustworthy result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{context}: matrix is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { context: String, min_eigenvalue: f64 },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("missing keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) => ErrorClass::Usage,
            Error::DimensionMismatch(_)
            | Error::MissingKeys(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::DegenerateInput(_) => ErrorClass::Data,
            Error::NotPositiveDefinite { .. } | Error::RankDeficient(_) | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::RankDeficient(_) => "rank_deficient",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::Numeric(_) => "numeric",
            Error::MissingKeys(_) => "missing_keys",
            Error::Format(f) => f.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn check_dims(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch(format!("{what}: expected {expected}, got {actual}")));
    }
    Ok(())
}
