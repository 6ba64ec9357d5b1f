//! Error type shared across the toolkit.

use std::path::PathBuf;

/// Toolkit-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem access failed (missing file, unwritable path, ...).
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse or are inconsistent.
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    /// A value violates a type invariant (overlapping segments, bad range, ...).
    #[error("invalid value: {0}")]
    Invalid(String),

    /// Configuration is internally inconsistent or incompatible with the data.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        Error::Invalid(reason.into())
    }

    pub fn config(reason: impl Into<String>) -> Self {
        Error::Config(reason.into())
    }

    /// Process exit code for the CLI: 2 for i/o failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
