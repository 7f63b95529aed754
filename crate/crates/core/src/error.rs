//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MoeError {
    /// Malformed or inconsistent input data (CSV schema violations,
    /// missing covariate rows, non-positive weights, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Shape or index mismatch between arguments.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure inside an optimizer or factorization.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MoeError {
    pub fn data(msg: impl Into<String>) -> Self {
        MoeError::Data(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        MoeError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        MoeError::Config(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        MoeError::Solver(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, MoeError>;
