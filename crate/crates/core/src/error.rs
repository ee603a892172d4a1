//! Crate-wide error type.

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("numeric domain: {0}")]
    NumericDomain(String),

    /// A model description does not chain or is otherwise inconsistent.
    #[error("model spec: {0}")]
    ModelSpec(String),

    /// A data file failed to parse (bad magic, truncation, count mismatch).
    #[error("format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericDomain(msg.into())
    }
}
