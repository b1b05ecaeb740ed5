use std::io;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed geometry: {0}")]
    MalformedGeometry(String),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("mesh has no UV coordinates and cannot be baked")]
    MissingUvs,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
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

    /// True for errors caused by bad input (mesh, config, frame sets) rather
    /// than by a failing provider or the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Image(_) | Error::Generator(_) => false,
            Error::Iteration { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

/// Failures at the appearance-provider boundary.
#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("no response from provider within {0:?}")]
    Timeout(Duration),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("remote job failed: {0}")]
    RemoteFailure(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("exchange i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
