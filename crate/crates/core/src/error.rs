use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Well-formed input that violates a data contract (empty split, duplicate triple, bad ratio).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("features reference unknown entities: {}", names.join(", "))]
    UnknownEntities { names: Vec<String> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown {kind}: {}", names.join(", "))]
    Lookup { kind: &'static str, names: Vec<String> },

    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint that does not match the dataset it is applied to.
    #[error("incompatible checkpoint: {0}")]
    Compat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
