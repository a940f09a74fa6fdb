use std::path::PathBuf;

use thiserror::Error;

/// Failures of the command-line front end. Each variant maps to its own
/// process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}: bad magic, not an embedding file")]
    BadMagic(PathBuf),

    #[error("{path}: unsupported format version {found}")]
    BadVersion { path: PathBuf, found: u16 },

    #[error("{path}: unsupported float width {found} (expected 4 or 8)")]
    BadWidth { path: PathBuf, found: u8 },

    #[error("{path}: truncated: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: usize },

    #[error("{path}: metadata has {found} rows but the embedding file holds {expected}")]
    CountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: metadata parse error: {message}")]
    Metadata { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] reid_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::BadMagic(_) => 10,
            CliError::BadVersion { .. } => 11,
            CliError::BadWidth { .. } => 12,
            CliError::Truncated { .. } => 13,
            CliError::TrailingBytes { .. } => 14,
            CliError::CountMismatch { .. } => 15,
            CliError::Metadata { .. } => 16,
            CliError::Core(_) => 20,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
