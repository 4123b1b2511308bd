//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("obj parse error at {path}:{line}: {message}")]
    ObjParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("obj face at {path}:{line} references missing index {index}")]
    ObjIndex {
        path: PathBuf,
        line: usize,
        index: isize,
    },

    #[error("mesh invalid: {0}")]
    MeshInvalid(String),

    #[error("mesh has no UV atlas; {0}")]
    MissingUvs(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown condition id '{0}'")]
    UnknownCondition(String),

    #[error("guidance error: {0}")]
    Guidance(String),

    #[error("non-finite gradient at parameter index {0}")]
    NonFiniteGradient(usize),

    #[error("non-finite residual at step {0}")]
    NonFiniteResidual(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
