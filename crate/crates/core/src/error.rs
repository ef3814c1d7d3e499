//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments or data (bad ranges, non-finite values, shape mismatch).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical routine failed; `step` names where (e.g. a filter step index).
    #[error("numerical failure at {step}: {detail}")]
    Numerical { step: String, detail: String },

    /// Configuration file problems, including unknown keys.
    #[error("config error: {0}")]
    Config(String),

    /// File parsing problems (CSV, checkpoint).
    #[error("parse error: {0}")]
    Parse(String),

    /// I/O failure with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(step: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            step: step.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code contract: 2 input, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Parse(_) => 2,
            Error::Numerical { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
