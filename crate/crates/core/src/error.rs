use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate bounds on axis {axis}: lo = hi = {value}")]
    DegenerateBounds { axis: usize, value: f64 },

    #[error("point {0:?} lies outside the unit cube")]
    Domain([f64; 3]),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("backward called without a matching forward pass")]
    NoForward,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("volume dims {dims:?} smaller than the {window}-voxel SSIM window")]
    Window { dims: [usize; 3], window: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
