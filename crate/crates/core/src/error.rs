use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the engine.
///
/// Variants are grouped by the category the command line maps onto an exit
/// code: configuration problems, bad input data, and scorer protocol failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate atom_id {0:?}")]
    DuplicateAtom(String),

    #[error("gold concept not in knowledge base: {}", .0.join(", "))]
    UnknownGold(Vec<String>),

    #[error("unknown semantic group {0:?}")]
    UnknownGroup(String),

    #[error("embedding format error: {0}")]
    EmbeddingFormat(String),

    #[error("zero vector for atom {0:?}")]
    ZeroVector(String),

    #[error("missing embeddings for {} atom(s): {}", .0.len(), preview(.0))]
    MissingEmbeddings(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training list for {0:?} does not contain its gold entry")]
    GoldNotInList(String),

    #[error("non-finite logit for {0:?}")]
    NonFiniteLogit(String),

    #[error("scorer protocol error for {id:?}: {message}")]
    Scorer { id: String, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Scorer,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Scorer { .. } => ErrorKind::Scorer,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    /// Scorer failures are worth retrying; everything else is deterministic.
    pub fn is_retriable(&self) -> bool {
        self.kind() == ErrorKind::Scorer
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}
