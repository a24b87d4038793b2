use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation, registration and measurement stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid contour: {0}")]
    InvalidContour(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("degenerate seed at pixel ({x}, {y}): zero flow magnitude")]
    DegenerateSeed { x: usize, y: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no electrode above activation threshold {0}")]
    EmptyRegion(f64),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
