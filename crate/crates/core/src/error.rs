use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown type: {0}")]
    UnknownType(String),

    #[error("duplicate sample id: {0}")]
    DuplicateId(String),

    #[error("duplicate type name: {0}")]
    DuplicateType(String),

    #[error("empty type name in vocabulary")]
    EmptyTypeName,

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("label index {index} out of range for vocabulary of {size} types")]
    LabelOutOfRange { index: usize, size: usize },

    #[error("sample mismatch at position {position}: expected {expected:?}, found {found:?}")]
    SampleMismatch {
        position: usize,
        expected: String,
        found: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("type gaussians are not usable (degenerate fit)")]
    UnusableGaussians,

    #[error("could not find a teacher bias giving both classes for type {type_index} after {attempts} attempts")]
    ResampleCapExceeded { type_index: usize, attempts: usize },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
