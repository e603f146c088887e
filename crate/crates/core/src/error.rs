use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PspinError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, PspinError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PspinError {
    PspinError::InvalidParameters(msg.into())
}
