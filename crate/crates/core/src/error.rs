use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid fairness category: {0}")]
    Category(String),

    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),

    #[error("unknown topic {0:?}")]
    UnknownTopic(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("document {0:?} is not in the corpus")]
    UnknownDocument(String),

    #[error("document {doc_id:?} has no valid label for category {category:?}")]
    MissingLabel { doc_id: String, category: String },

    #[error("{endpoint}: {message}")]
    Service { endpoint: String, message: String },

    #[error("missing records for queries: {}", .0.join(", "))]
    MissingRecords(Vec<String>),

    #[error("category mismatch: {left:?} vs {right:?}")]
    CategoryMismatch { left: String, right: String },

    #[error("duplicate ledger key {0}")]
    DuplicateKey(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible synthetic corpus: {0}")]
    Infeasible(String),

    #[error("missing ledger {0:?}")]
    MissingLedger(String),

    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },

    #[error("completed artifact {0} was modified")]
    Corrupt(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn service(endpoint: &str, message: impl Into<String>) -> Self {
        Error::Service {
            endpoint: endpoint.to_string(),
            message: message.into(),
        }
    }
}
