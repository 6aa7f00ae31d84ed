use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlqError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SlqError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SlqError::InvalidArgument(msg.into()))
}

pub(crate) fn ensure_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return invalid(format!("{what}: length {got}, expected {expected}"));
    }
    Ok(())
}
