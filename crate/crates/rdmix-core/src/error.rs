//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdError {
    /// Input file or column mapping does not match expectations.
    #[error("schema error: {0}")]
    Schema(String),

    /// Data fail a validity requirement (empty after filtering, one-sided
    /// design, degenerate groups, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid argument to a statistical operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure (non-positive-definite posterior, singular system).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RdError>;
