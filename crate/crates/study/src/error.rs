use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{0}")]
    NotFound(String),

    /// The trial was already judged.
    #[error("{0}")]
    Conflict(String),

    /// The trial is not the session's current one.
    #[error("{0}")]
    Precondition(String),

    #[error("{0}")]
    Invalid(String),

    #[error("event log {path}, line {line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl StudyError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Stable machine-readable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Conflict(_) => "already_judged",
            Self::Precondition(_) => "out_of_order",
            Self::Invalid(_) => "invalid_request",
            Self::Log { .. } | Self::Io { .. } | Self::Image { .. } => "internal",
        }
    }
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;
