use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum UbsError {
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A primitive whose query block could not be inverted even after jitter.
    #[error("degenerate primitive: {0}")]
    Degenerate(String),

    #[error("non-finite gradient for primitive {primitive}, parameter {param}")]
    NonFiniteGradient { primitive: usize, param: String },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("scene format: {0}")]
    Format(String),

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = UbsError> = std::result::Result<T, E>;
