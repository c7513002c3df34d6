use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] capsnet_core::Error),

    #[error(transparent)]
    Data(#[from] capsnet_data::DataError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Config(String),

    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("run store: {0}")]
    Store(String),
}

impl HarnessError {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        HarnessError::Contract { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}
