use std::path::PathBuf;

use crate::race::RaceCategory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid race mix: {0}")]
    InvalidMix(String),

    #[error("mix {0} is not one of the enumerated simplex points")]
    UnknownMix(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("insufficient pool for {race}: requested {requested}, available {available}")]
    InsufficientPool {
        race: RaceCategory,
        requested: usize,
        available: usize,
    },

    #[error("subject {subject} has {available} unused images, {requested} requested")]
    InsufficientImages {
        subject: String,
        requested: usize,
        available: usize,
    },

    #[error("duplicate image id {0}")]
    DuplicateImage(String),

    #[error("unknown image id {0}")]
    MissingImage(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at step {step} (epoch {epoch}); batch images: {batch:?}")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        batch: Vec<String>,
    },

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("run aborted after {completed} cells; resume token at {token}")]
    Aborted { completed: usize, token: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
