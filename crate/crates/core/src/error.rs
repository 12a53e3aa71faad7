//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("cycle in class hierarchy: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("unknown class id {0}")]
    UnknownClassId(u32),

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("unknown image id {0}")]
    UnknownImageId(u32),

    #[error("duplicate image `{0}`")]
    DuplicateImage(String),

    #[error("invalid example sets: {0}")]
    InvalidExamples(String),

    #[error("invalid class expression: {0}")]
    InvalidExpression(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("no manifest entry for label `{label}` (neuron {neuron})")]
    MissingManifestEntry { neuron: usize, label: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Coarse category used by the command-line front end to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) => ErrorCategory::Config,
            Error::Io { .. } => ErrorCategory::File,
            _ => ErrorCategory::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    File,
    Data,
}
