//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AscError {
    /// Incompatible matrix shapes for an operation; names both shapes.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// Invalid parameter or argument value.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Malformed container or config input; `offset` is the byte offset
    /// (or line number for text configs) where parsing failed.
    #[error("parse error at offset {offset}: {what}")]
    Parse { offset: u64, what: String },

    /// A loss or parameter became non-finite during training.
    #[error("non-finite value in {component} at epoch {epoch}, step {step}")]
    NonFinite {
        component: String,
        epoch: usize,
        step: usize,
    },

    /// The gradient-check loss function returned different values for
    /// identical inputs.
    #[error("loss function is not deterministic: {0} != {1}")]
    Determinism(f64, f64),

    #[error("checkpoint does not match: {0}")]
    CheckpointMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AscError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AscError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
