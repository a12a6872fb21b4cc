use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite activation in layer `{0}`")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("world generation gave up after {attempts} attempts (size {size}, density {density})")]
    GenerationFailed {
        size: usize,
        density: f64,
        attempts: usize,
    },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("prior footprint lies entirely outside the {height}x{width} memory")]
    FootprintOutside { height: usize, width: usize },

    #[error("access weight has no mass")]
    ZeroWeight,

    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("render error: {0}")]
    Render(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
