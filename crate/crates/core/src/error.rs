use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Ply {
        path: PathBuf,
        #[source]
        source: crate::io::ply::PlyError,
    },

    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("missing forward state: {0}")]
    MissingForwardState(String),

    #[error("fitting diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
}

/// Failure kinds for the text and binary formats other than PLY.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u64),
    #[error("body size {actual} does not match header ({expected} bytes expected)")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("empty descriptor set")]
    Empty,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("view {view}: rotation is not orthonormal (error {error:e})")]
    NonOrthonormal { view: String, error: f64 },
    #[error("unsupported image layout: {0}")]
    UnsupportedImage(String),
    #[error("image decode failed: {0}")]
    Decode(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            kind,
        }
    }
}
