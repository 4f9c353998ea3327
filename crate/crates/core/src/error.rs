use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: evaluation left its domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("computation record is stale: parameters changed since it was recorded (recorded at version {recorded}, store is at {current})")]
    StaleRecord { recorded: u64, current: u64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in objective term {term}")]
    NonFinite { term: &'static str },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} payload bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    Version { expected: u32, found: u32 },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
