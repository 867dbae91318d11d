use std::io;

use thiserror::Error;

/// Errors produced by the learning engine.
#[derive(Debug, Error)]
pub enum CopiError {
    /// Operand shapes do not conform for the named operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Inconsistent or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed dataset file.
    #[error("format error in {path}: {field}: {detail}")]
    Format {
        path: String,
        field: &'static str,
        detail: String,
    },

    /// Checkpoint failed validation (magic, version, CRC, truncation).
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    /// A parameter became non-finite during training.
    #[error("non-finite {param} in layer {layer} during epoch {epoch}")]
    Diverged {
        param: &'static str,
        layer: usize,
        epoch: usize,
    },

    /// A file could not be read.
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CopiError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> CopiError {
    CopiError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
