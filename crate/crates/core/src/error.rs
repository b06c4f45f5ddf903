//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: dimension mismatches, invalid configs.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Non-finite values encountered during numeric work.
    #[error("numeric failure at {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// A forget rule selected nothing (or was otherwise unusable).
    #[error("invalid forget rule: {0}")]
    InvalidRule(String),

    /// File ingestion failure, with the byte offset when known.
    #[error("parse error in {path} at byte {offset}: {msg}")]
    Parse {
        path: String,
        offset: u64,
        msg: String,
    },

    /// A metric was requested over an empty row set.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Checkpoint serialization problems.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
