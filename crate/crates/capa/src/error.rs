//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("non-finite value at node index {index}: {context}")]
    NonFinite { index: usize, context: String },

    #[error("inputs do not share a quadrature grid")]
    GridMismatch,

    #[error("singular geometry: {0}")]
    Singularity(String),

    #[error("grid under-resolved: {0}")]
    UnderResolved(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported scope: {0}")]
    Scope(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
