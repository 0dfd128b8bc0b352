use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input stream is empty")]
    EmptyInput,

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("every basket was dropped during ingestion")]
    EmptyCorpus,

    #[error("cannot split corpus: {0}")]
    Split(String),

    #[error("invalid synthetic corpus spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampler state corrupted: {0}")]
    StateCorruption(String),

    #[error("token id {token} is outside a vocabulary of size {vocab_size}")]
    Oov { token: u32, vocab_size: usize },

    #[error("invalid topic model: {0}")]
    Model(String),

    #[error("exact enumeration needs {configurations} topic configurations (limit {limit})")]
    Intractable { configurations: f64, limit: f64 },

    #[error("vector has zero norm")]
    DegenerateVector,

    #[error("product {0} never occurs in the reference corpus")]
    UnseenProduct(u32),

    #[error("topic has fewer than two products with nonzero probability")]
    DegenerateTopic,

    #[error("{0} is undefined for this input")]
    Undefined(&'static str),

    #[error("within-chain variance is zero")]
    DegenerateTrace,

    #[error("no cluster has at least {min_size} members at threshold {threshold}")]
    EmptyModel { threshold: f64, min_size: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration rather than
    /// a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Spec(_)
                | Error::Split(_)
                | Error::InvalidInput(_)
                | Error::Record { .. }
                | Error::EmptyInput
        )
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
