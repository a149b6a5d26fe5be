use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid logprob at index {index}: {value}")]
    InvalidLogprob { index: usize, value: f64 },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid label space: {0}")]
    LabelSpace(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("method configuration: {0}")]
    Config(String),

    #[error("invalid task schema `{task_id}`: {reason}")]
    Schema { task_id: String, reason: String },

    #[error("unknown task/template `{0}`")]
    UnknownTemplate(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("cannot sample {requested} demonstrations from {available} training examples")]
    InsufficientTrain { requested: usize, available: usize },

    #[error("shot count {0} outside 1..=4")]
    ShotCount(usize),

    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },

    #[error("endpoint capability missing: {0}")]
    Capability(String),

    #[error("no offline record for prompt {prompt:?} with candidate {candidate:?}")]
    CacheMiss { prompt: String, candidate: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unmapped label {label:?} at row {row}")]
    LabelMap { row: usize, label: String },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("split `{split}`: expected {expected} examples, found {actual}")]
    CountMismatch {
        split: String,
        expected: usize,
        actual: usize,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("example {index}: {source}")]
    AtExample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("report aggregation: {0}")]
    Aggregate(String),

    #[error("{}: {source}", path.display())]
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

    pub(crate) fn at_example(self, index: usize) -> Self {
        Error::AtExample {
            index,
            source: Box::new(self),
        }
    }

    /// Strips any per-example wrapping.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtExample { source, .. } => source.root(),
            other => other,
        }
    }
}
