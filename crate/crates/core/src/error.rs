use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of a failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),

    #[error(transparent)]
    LossHistory(#[from] LossHistoryError),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::Trace(TraceError::Io(_)) => ErrorClass::Io,
            Error::LossHistory(LossHistoryError::Csv(e)) if e.is_io_error() => ErrorClass::Io,
            Error::Csv(e) if e.is_io_error() => ErrorClass::Io,
            Error::Json(e) if e.is_io() => ErrorClass::Io,
            Error::Trace(_)
            | Error::LossHistory(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::Empty(_)
            | Error::NonFinite(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Validation,
        }
    }
}

/// Failures reading or writing the binary gradient-trace format.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic: expected \"GTRC\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported trace version {0} (expected 1)")]
    VersionMismatch(u32),

    #[error("trace header truncated")]
    TruncatedHeader,

    #[error("trace truncated inside record {0}")]
    TruncatedRecord(usize),

    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error("trace dim must be positive")]
    ZeroDim,

    #[error("non-finite gradient entry in sample {sample_id}")]
    NonFinite { sample_id: u32 },

    #[error("duplicate sample id {0}")]
    DuplicateSampleId(u32),

    #[error("sample {sample_id} has {found} entries, trace dim is {expected}")]
    RecordDim {
        sample_id: u32,
        expected: usize,
        found: usize,
    },

    #[error("sample {sample_id} has domain hint {hint} (must be >= -1)")]
    BadDomainHint { sample_id: u32, hint: i32 },

    #[error("too many records for a u32 count: {0}")]
    TooManyRecords(usize),

    #[error("trace i/o: {0}")]
    Io(#[from] io::Error),
}

/// Failures parsing the `task,step,loss` CSV.
#[derive(Debug, Error)]
pub enum LossHistoryError {
    #[error("expected header `task,step,loss`, found `{0}`")]
    BadHeader(String),

    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },

    #[error("task {task}: step {step} does not increase on previous step {previous}")]
    NonMonotoneStep { task: u32, step: u64, previous: u64 },

    #[error("task {task}: duplicate step {step}")]
    DuplicateStep { task: u32, step: u64 },

    #[error("task {task}, step {step}: loss {loss} must be finite and non-negative")]
    BadLoss { task: u32, step: u64, loss: f64 },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
