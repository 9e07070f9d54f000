use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: end {end} is not after start {start}")]
    Interval { line: usize, start: f64, end: f64 },

    #[error("unpaired recordings: {}", .0.join(", "))]
    MissingPair(Vec<String>),

    #[error("split: {0}")]
    Split(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True when the failure stems from bad input data rather than a usage
    /// or numeric problem.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Interval { .. }
                | Error::MissingPair(_)
                | Error::Split(_)
                | Error::Checkpoint(_)
                | Error::Io { .. }
                | Error::Wav { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
