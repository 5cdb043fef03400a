use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate annotation for instance {instance_id:?} by annotator {annotator_id:?}")]
    Duplicate {
        instance_id: String,
        annotator_id: String,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("insufficient {class} entries: requested {requested}, available {available}")]
    InsufficientClass {
        class: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite activation in {0}")]
    NonFinite(&'static str),
    #[error("empty {0} subset")]
    EmptySubset(String),
    #[error("length mismatch: {left} predictions vs {right} golds")]
    LengthMismatch { left: usize, right: usize },
    #[error("no co-annotated instances for annotators {0:?} and {1:?}")]
    NoOverlap(String, String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("run {run} failed: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("analysis unavailable: {0}")]
    AnalysisUnavailable(String),
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
