use std::io;

use thiserror::Error;

/// Errors raised by the library. The CLI maps every variant to a nonzero exit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("rejected ({code}): {reason}")]
    Rejected { code: &'static str, reason: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn rejected(code: &'static str, reason: impl Into<String>) -> Self {
        Error::Rejected {
            code,
            reason: reason.into(),
        }
    }
}
