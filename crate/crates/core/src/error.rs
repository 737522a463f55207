// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("missing tensor `{0}` in weight manifest")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}` in weight manifest")]
    UnexpectedTensor(String),

    #[error("tensor `{name}` has shape {found:?}, architecture expects {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checksum mismatch for tensor `{0}`")]
    Checksum(String),

    #[error("corrupt weights: {0}")]
    CorruptWeights(String),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("selector out of range: {0}")]
    SelectorOutOfRange(String),

    #[error("non-finite loss {value} at step {step} ({target})")]
    NonFiniteLoss { step: usize, value: f64, target: String },

    #[error("not enough images: need {needed}, got {got}")]
    NotEnoughImages { needed: usize, got: usize },

    #[error("empty corpus at {0}")]
    EmptyCorpus(PathBuf),

    #[error("image decode failed for {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
