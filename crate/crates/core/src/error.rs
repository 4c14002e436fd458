use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("map has zero total mass")]
    ZeroMass,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("fixation map contains no fixations")]
    EmptyFixations,

    #[error("every pixel is fixated; no negatives available")]
    AllFixated,

    #[error("negative pool from other images is empty")]
    EmptyNegativePool,

    #[error("average pooling needs even dimensions, got {width}x{height}")]
    OddDimension { width: usize, height: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("fixation ({x}, {y}) lies outside a {width}x{height} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{component} failed: {source}")]
    LossComponent {
        component: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by NaN/inf during training.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => true,
            Error::LossComponent { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
