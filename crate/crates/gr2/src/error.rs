use std::io;
use std::path::PathBuf;

/// Errors of the experiment driver. Each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Gr2Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Core(#[from] gr2_core::Error),
    #[error("job failed: {0}")]
    Job(String),
}

impl Gr2Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Gr2Error::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Gr2Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Gr2Error>;
