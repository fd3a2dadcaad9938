use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} channels")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate condensation schedule: {0}")]
    Schedule(String),

    #[error("condensation: {0}")]
    Condense(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("{path}: line {line}: {reason}")]
    Data {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr:e}): loss is {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
