use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: unknown entity type `{name}`")]
    UnknownType { line: usize, name: String },

    #[error("line {line}: span ({start}, {end}) out of range for a sequence of {n} tokens")]
    SpanOutOfRange {
        line: usize,
        start: usize,
        end: usize,
        n: usize,
    },

    #[error("line {line}: duplicate span ({start}, {end}, {type_name})")]
    DuplicateSpan {
        line: usize,
        start: usize,
        end: usize,
        type_name: String,
    },

    #[error("no query template for entity type `{0}`")]
    MissingTemplate(String),

    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid span ({start}, {end}) for a sequence of {n} tokens")]
    InvalidSpan { start: usize, end: usize, n: usize },

    #[error("overlapping spans cannot be written as BIO (document `{0}`)")]
    OverlapNotExpressible(String),

    #[error("combined input of length {len} exceeds position capacity {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("dice loss is 0/0: lambda is zero and both vectors are all-zero")]
    DegenerateInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("document id mismatch: `{0}`")]
    DocIdMismatch(String),

    #[error("non-finite loss at batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint schema version {found} does not match supported version {expected}")]
    SchemaMismatch { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
