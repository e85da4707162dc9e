use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sentence {0} has no nouns")]
    NounlessSentence(usize),

    #[error("golden hop {0} is absent from the knowledge graph")]
    MissingHop(String),

    #[error("head entity {0} has no candidate relations")]
    NoCandidates(String),

    #[error("entity {0} is not in the story graph")]
    UnknownEntity(String),

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("story is empty")]
    EmptyStory,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("zero diversity factors")]
    ZeroDiversityFactors,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
