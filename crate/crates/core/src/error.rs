use thiserror::Error;

/// Errors raised by ingestion, validation, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("chronology error: {0}")]
    Chronology(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite gradient at step {step} (norm {norm})")]
    NonFiniteGradient { step: u64, norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
