use thiserror::Error;

/// Errors produced by the builders, planner, numerics and metrics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("structural error at row {row}, column {col}: {msg}")]
    Structure { row: usize, col: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
