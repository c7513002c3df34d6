use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated, need {needed} bytes but file has {actual}")]
    Truncated { path: PathBuf, needed: usize, actual: usize },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {label} at index {index} is outside 0..{num_classes}")]
    LabelOutOfRange { index: usize, label: usize, num_classes: usize },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("patch extraction: {0}")]
    Extraction(String),

    #[error("manifest: {0}")]
    Manifest(String),
}

impl DataError {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        DataError::Contract { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}
