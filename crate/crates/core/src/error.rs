use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("embedding needs at least 2 channels, got {0}")]
    TooFewChannels(usize),

    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("weights must be max-min normalized before building a map")]
    RawWeights,

    #[error("no activated region in mask")]
    NoActivatedRegion,

    #[error("invalid bounding box [{0}, {1}, {2}, {3}]: area must be positive")]
    InvalidBox(i64, i64, i64, i64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {msg}")]
    Npy { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: episode {episode_id}: {msg}")]
    Manifest {
        path: PathBuf,
        episode_id: String,
        msg: String,
    },

    #[error("manifest {path}: duplicate id {episode_id}")]
    DuplicateId { path: PathBuf, episode_id: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
