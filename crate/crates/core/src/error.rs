use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing manifest.json")]
    MissingManifest { path: PathBuf },

    #[error("{path}: malformed manifest: {message}")]
    ManifestParse { path: PathBuf, message: String },

    #[error("manifest field `{field}`: {message}")]
    Manifest { field: String, message: String },

    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },

    #[error("tensor `{name}`: non-finite value at index {index}")]
    NonFiniteTensor { name: String, index: usize },

    #[error("no included weight matrices")]
    NoWeightMatrices,

    #[error("weight matrix `{name}` has zero spectral norm")]
    ZeroMatrix { name: String },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("seed {seed}: {message}")]
    Trajectory { seed: i64, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite observation at timestep {t}, feature {feature}")]
    NonFiniteObservation { t: usize, feature: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ZeroMatrix { .. } | Error::Numerical(_) => ErrorClass::Numerical,
            _ => ErrorClass::Input,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
