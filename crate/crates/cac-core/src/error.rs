//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands had incompatible shapes for an operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A reduction or row operation was given an axis that does not exist.
    #[error("{op}: invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    /// Tensor constructor received data that does not match its shape.
    #[error("tensor shape {shape:?} implies {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    /// `Tape::backward` was called on a non-scalar value.
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    /// A label value was outside `{0..n_classes-1} ∪ {IGNORE}`.
    #[error("label {value} at pixel {index} out of range for {n_classes} classes")]
    InvalidLabel {
        value: u16,
        index: usize,
        n_classes: usize,
    },

    /// Invalid run or scene configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary file did not match the expected on-disk format.
    #[error("{path}: format error at byte {offset}: {what}")]
    Format {
        path: String,
        offset: u64,
        what: String,
    },

    /// Underlying I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// The training loop produced a non-finite loss.
    #[error("training diverged: non-finite {term} at epoch {epoch}, batch {batch}")]
    Diverged {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &std::path::Path, offset: u64, what: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            offset,
            what: what.into(),
        }
    }
}
