use std::fmt;

/// Broad classification of an [`Error`], used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration.
    Usage,
    /// Malformed, missing or insufficient input data.
    Data,
    /// A numerical routine failed (singular matrix, no convergence, ...).
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient history: {message} (short by {shortfall_days} days)")]
    InsufficientHistory { message: String, shortfall_days: i64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub(crate) fn data(msg: impl fmt::Display) -> Self {
        Error::Data(msg.to_string())
    }

    pub(crate) fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }

    /// Wrap the error with a human-readable context string.
    pub fn context(self, context: impl fmt::Display) -> Self {
        Error::Context {
            context: context.to_string(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::DimensionMismatch { .. } => ErrorKind::Usage,
            Error::Data(_) | Error::InsufficientHistory { .. } => ErrorKind::Data,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorKind::Data,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Context { source, .. } => source.kind(),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait ResultExt<T> {
    fn context_with<F, D>(self, f: F) -> Result<T>
    where
        F: FnOnce() -> D,
        D: fmt::Display;
}

impl<T> ResultExt<T> for Result<T> {
    fn context_with<F, D>(self, f: F) -> Result<T>
    where
        F: FnOnce() -> D,
        D: fmt::Display,
    {
        self.map_err(|e| e.context(f()))
    }
}
