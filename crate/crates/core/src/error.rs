use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("at least 3 observations are required to fit a skew-normal law, got {0}")]
    TooFewObservations(usize),

    #[error("sample has zero variance")]
    DegenerateSample,

    #[error("sample contains a non-finite value at position {0}")]
    NonFiniteValue(usize),

    #[error("standard error needs the fitted sample size, but n_fit is 0")]
    MissingSampleSize,

    #[error("observed information matrix is singular or not positive definite")]
    SingularInformation,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no time point has a risk set large enough for estimation (need {min_n})")]
    NoEstimableTimePoints { min_n: usize },

    #[error("every bootstrap replicate failed at time {time}")]
    AllReplicatesFailed { time: u32 },

    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: line {line}: duplicate observation for subject {subject:?} at time {time}")]
    DuplicateObservation {
        path: PathBuf,
        line: u64,
        subject: String,
        time: u32,
    },

    #[error("{0}: file has no data rows")]
    EmptyFile(PathBuf),

    #[error("{path}: no column named {column:?}")]
    UnknownColumn { path: PathBuf, column: String },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Broad failure class, used for process exit codes and FFI status values.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Config,
            Error::MalformedRow { .. }
            | Error::DuplicateObservation { .. }
            | Error::EmptyFile(_)
            | Error::UnknownColumn { .. }
            | Error::EmptyDataset
            | Error::File { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::TooFewObservations(_)
            | Error::DegenerateSample
            | Error::NonFiniteValue(_)
            | Error::MissingSampleSize
            | Error::SingularInformation
            | Error::NoEstimableTimePoints { .. }
            | Error::AllReplicatesFailed { .. }
            | Error::NotPositiveDefinite => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}
