use std::path::PathBuf;

use crate::backends::BackendError;
use crate::latent::LatentError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Latent(#[from] LatentError),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Data(#[from] crate::data::DataError),

    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("empty reference set: the personalized term must be skipped by the caller")]
    EmptyReferenceSet,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("video job: {0}")]
    Video(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
