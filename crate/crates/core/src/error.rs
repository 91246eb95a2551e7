use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("random stream exhausted: needed {needed} draws, {available} available")]
    StreamExhausted { needed: usize, available: usize },

    #[error("model diverged at round {round}: {detail}")]
    Diverged { round: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed wire message: {0}")]
    Wire(String),
}

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
