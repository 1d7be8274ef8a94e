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

    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: record `{id}` has no label but the split is declared labeled")]
    MissingLabel { path: PathBuf, line: usize, id: String },

    #[error("record `{id}`: term `{term}` does not occur in its context")]
    TermNotFound { id: String, term: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown pet_id `{0}`")]
    UnknownPet(String),

    #[error("empty literal description for pet_id `{0}`")]
    EmptyDescription(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("imagery generation stopped after {generated} of {requested} images: {message}")]
    PartialGeneration {
        generated: usize,
        requested: usize,
        message: String,
    },

    #[error("cache entry {path} is corrupted: {message}")]
    CacheCorrupted { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scoring prompt `{id}` failed: {source}")]
    Scoring {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate paired sample: differences have zero variance")]
    DegeneratePairedSample,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }

    /// True when the failure originates in a model or generation backend
    /// rather than in user data or arguments.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend { .. } | Error::PartialGeneration { .. } | Error::Divergence { .. } => {
                true
            }
            Error::Fold { source, .. } | Error::Scoring { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
