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

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid label {0:?}: expected O, B-<slot> or I-<slot>")]
    BadLabel(String),

    #[error("no sentences")]
    NoSentences,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("K-shot coverage infeasible, deficient labels: {}", .0.join(", "))]
    Infeasible(Vec<String>),

    #[error("need {needed} query sentences outside the support set, only {available} available")]
    NotEnoughQueries { needed: usize, available: usize },

    #[error("domain {domain}: {source}")]
    InDomain {
        domain: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing embedding record {0}")]
    MissingRecord(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("reference pool has {pool} rows but the label set needs {needed}")]
    PoolTooSmall { pool: usize, needed: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("projection dimension {requested} exceeds null-space dimension {available}")]
    ProjectionTooLarge { requested: usize, available: usize },

    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),

    #[error("sequence length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("step must be positive")]
    NonPositiveStep,

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_domain(domain: &str, source: Error) -> Self {
        Error::InDomain {
            domain: domain.to_string(),
            source: Box::new(source),
        }
    }
}
