use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input text is empty")]
    EmptyInput,
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("dimension error: {0}")]
    Dim(String),
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Vocab { id: usize, vocab: usize },
    #[error("non-finite value in {tensor}")]
    Numerical { tensor: String },
    #[error("mask keeps no tokens")]
    EmptyCompression,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("oracle unavailable after {attempts} attempts: {message}")]
    OracleUnavailable { attempts: u32, message: String },
    #[error("checkpoint version mismatch: {0}")]
    Version(String),
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
