use std::path::PathBuf;

use thiserror::Error;
use trainmap::ErrorClass;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] trainmap::Error),

    /// A core error raised while handling a specific file.
    #[error("{}: {source}", path.display())]
    At {
        path: PathBuf,
        #[source]
        source: trainmap::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn at(path: impl Into<PathBuf>) -> impl FnOnce(trainmap::Error) -> CliError {
        let path = path.into();
        move |source| CliError::At { path, source }
    }

    /// 0 is success, 1 an input problem, 2 a numerical failure.
    pub fn exit_code(&self) -> i32 {
        let class = match self {
            CliError::Core(e) | CliError::At { source: e, .. } => e.class(),
            CliError::Io { .. } | CliError::Usage(_) => ErrorClass::Input,
        };
        match class {
            ErrorClass::Input => 1,
            ErrorClass::Numerical => 2,
        }
    }
}
