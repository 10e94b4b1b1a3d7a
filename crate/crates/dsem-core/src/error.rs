//! Error type shared across the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsemError>;

/// Errors produced by model validation, data checks, and numerical routines.
#[derive(Debug, Error)]
pub enum DsemError {
    /// Inconsistent dimensions, invalid options, or malformed configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model specification that violates a structural requirement.
    #[error("specification error: {0}")]
    Spec(String),

    /// Data incompatible with the model (support violations, duplicates, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A declared-out-of-scope model feature was requested.
    #[error("unsupported feature: {0}")]
    Unsupported(String),

    /// Numerical failure with enough context to locate the site.
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl DsemError {
    pub fn config(msg: impl Into<String>) -> Self {
        DsemError::Config(msg.into())
    }

    pub fn spec(msg: impl Into<String>) -> Self {
        DsemError::Spec(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        DsemError::Data(msg.into())
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        DsemError::Unsupported(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        DsemError::Numerical(msg.into())
    }
}
