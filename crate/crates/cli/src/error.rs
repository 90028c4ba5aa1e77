use std::path::{Path, PathBuf};

/// Exit code for validation and usage errors.
pub const EXIT_INVALID: i32 = 1;
/// Exit code for file system and network errors.
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] fieldfuse::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("server: {0}")]
    Server(anyhow::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Io { .. } | CliError::Server(_) => EXIT_IO,
            _ => EXIT_INVALID,
        }
    }
}
