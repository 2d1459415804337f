//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its documented range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A configuration file or experiment description is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor/batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    Numeric(String),

    /// On-disk corpus or checkpoint does not match its manifest.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
}
