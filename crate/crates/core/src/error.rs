use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("numeric error at epoch {epoch}: {message}")]
    Numeric { epoch: usize, message: String },
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("config hash mismatch: checkpoint {found}, run {expected}")]
    HashMismatch { found: String, expected: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
