use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("vector norm below floor in {0}")]
    ZeroNorm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reference pool not full ({occupancy}/{capacity})")]
    PoolNotFull { occupancy: usize, capacity: usize },

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: impl Into<String>) -> Error {
    Error::Shape(what.into())
}
