use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input located at a file position (1-based line and column).
    #[error("{}:{line}:{column}: {message}", path.display())]
    Input {
        path: PathBuf,
        line: u64,
        column: u64,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] ztps::Error),

    /// Outputs were written, but some nodes fell back after numerical
    /// failures.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(path: &Path, line: u64, column: u64, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            line,
            column,
            message: message.into(),
        }
    }

    pub fn file(path: &Path, message: impl Into<String>) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 for input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) | CliError::Model(ztps::Error::Optimization { .. }) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
