use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    ZeroRow { row: usize, norm: f64 },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("invalid item {id:?}: {message}")]
    InvalidItem { id: String, message: String },

    #[error("embeddings sum to the zero vector and cannot be fused")]
    ZeroSum,

    #[error("batch size mismatch: student has {student} rows, teacher has {teacher}")]
    BatchSizeMismatch { student: usize, teacher: usize },

    #[error("corpus has no usable items")]
    EmptyCorpus,

    #[error("index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("no eligible negatives remain for query {query}")]
    NoEligibleNegatives { query: usize },

    #[error("unknown negative mode {0:?} (expected hard, easy or random)")]
    ModeUnknown(String),

    #[error("cache plan does not partition the batch: {0}")]
    PlanMismatch(String),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("k = {k} exceeds the {candidates} available candidates")]
    KExceedsCandidates { k: usize, candidates: usize },

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("pair for query {query:?} references missing positive {positive:?}")]
    MissingPositive { query: String, positive: String },

    #[error("no teacher embedding for item {0:?}")]
    MissingEmbedding(String),

    #[error("row {row} is not unit-norm (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(expected: usize, actual: usize, context: impl Into<String>) -> Self {
        Error::DimMismatch {
            expected,
            actual,
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
