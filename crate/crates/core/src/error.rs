use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed taxonomy: {0}")]
    MalformedTaxonomy(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad input shape: {0}")]
    BadInputShape(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("gradient is not finite at {0}")]
    NonFiniteGradient(String),

    #[error("every pixel of the target carries the ignore label")]
    AllPixelsIgnored,

    #[error("loss diverged at iteration {iter}: {loss}")]
    DivergedLoss { iter: usize, loss: f64 },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("class id {id} out of range for {num_classes} classes")]
    IdOutOfRange { id: u32, num_classes: usize },

    #[error("no counted pixels or classes in the requested scope")]
    EmptyScope,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("no images with primary label {0}")]
    NoImagesForLabel(String),

    #[error("misaligned annotation pair: {0}")]
    MisalignedPair(String),

    #[error("dataset holds a single class ({0}); at least two are required")]
    SingleClassDataset(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
