//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the core pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("timestep {dt:.3e} s exceeds the stable increment {bound:.3e} s")]
    UnstableTimestep { dt: f64, bound: f64 },

    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty or has no valid samples")]
    EmptyDataset,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
