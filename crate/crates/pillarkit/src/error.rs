//! Crate-wide error type.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A point-cloud file that does not follow the binary or CSV layout.
    /// `position` is a byte offset for binary inputs and a 1-based line
    /// number for CSV inputs.
    #[error("malformed point data in {path} at {unit} {position}: {detail}")]
    PointFormat {
        path: PathBuf,
        unit: &'static str,
        position: u64,
        detail: String,
    },

    /// A label/detection JSON document that parses but violates the schema.
    #[error("label schema violation at {field}: {detail}")]
    LabelSchema { field: String, detail: String },

    /// Invalid configuration (range, size, or cross-field constraint).
    #[error("invalid config: {0}")]
    Config(String),

    /// Tensor shape mismatch in an NN op.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A weight tensor required by a forward pass is absent from the store.
    #[error("missing weight `{0}`")]
    MissingWeight(String),

    /// A weight file that cannot be decoded; `offset` is the byte position
    /// at which decoding failed.
    #[error("corrupt weight file at byte {offset}: {detail}")]
    WeightFormat { offset: u64, detail: String },

    /// An internal invariant was violated. This is a defect in the calling
    /// code or in this crate, never a user-input problem.
    #[error("internal defect: {0}")]
    Defect(String),
}

impl Error {
    /// True for errors that indicate a bug rather than bad input.
    pub fn is_defect(&self) -> bool {
        matches!(self, Error::Defect(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
