use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("row id {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("groups do not partition 0..{dim}: {reason}")]
    InvalidGroups { dim: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        Error::Dimension { expected, actual }
    }
}
