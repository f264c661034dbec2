use std::io;
use std::path::{Path, PathBuf};

use scatternet_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    /// 1 usage or configuration, 2 data, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Core(CoreError::Config(_) | CoreError::Build(_)) => 1,
            Error::Core(CoreError::NumericalAbort { .. }) => 3,
            _ => 2,
        }
    }
}
