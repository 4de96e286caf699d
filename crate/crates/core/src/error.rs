use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("no point projects into the image")]
    EmptyProjection,
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    Bounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("no valid (non-ignored) points in loss")]
    NoValidPoints,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("invalid domain spec: {0}")]
    Spec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("integrity check failed for {path}: {msg}")]
    Integrity { path: PathBuf, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::State(_) => 2,
            Error::Format { .. }
            | Error::Integrity { .. }
            | Error::Io { .. }
            | Error::Spec(_)
            | Error::EmptyProjection
            | Error::Bounds { .. } => 3,
            Error::Numeric(_)
            | Error::Shape(_)
            | Error::NoValidPoints
            | Error::UndefinedMetric(_) => 4,
        }
    }
}
