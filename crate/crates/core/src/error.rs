use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error at sample offset {offset}: {reason}")]
    Input { offset: u64, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration: {field}: {constraint}")]
    Config { field: String, constraint: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("weight file error: {0}")]
    Format(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot project point {index}: depth {z} is not in front of the camera")]
    Projection { index: usize, z: f32 },

    #[error("candidate selection: {0}")]
    Selection(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from configuration rather than input data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::ConfigParse { .. })
    }
}
