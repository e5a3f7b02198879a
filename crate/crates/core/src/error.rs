//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed or inconsistent input data (CSV contents, shapes, ranges).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical procedure failed (non-finite loss after exhausting
    /// restarts, non-convergent root solve, invalid density).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Model file could not be read, written, or is from an unknown format
    /// version.
    #[error("model file error: {0}")]
    Persistence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
