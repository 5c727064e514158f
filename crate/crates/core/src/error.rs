use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("missing {} daily state(s): {}", missing.len(), format_dates(missing))]
    DataAvailability { missing: Vec<NaiveDate> },

    #[error("corrupt tensor header in {}: {detail}", path.display())]
    CorruptHeader { path: PathBuf, detail: String },

    #[error("tensor shape mismatch in {}: expected {expected:?}, found {found:?}", path.display())]
    ShapeMismatch {
        path: PathBuf,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("non-finite value at flat index {index} in {}", path.display())]
    NonFinite { path: PathBuf, index: usize },

    #[error("numerical failure in stage `{stage}`")]
    NumericalFailure { stage: String },

    #[error("training diverged at step {step}: loss is not finite")]
    TrainingFailure { step: usize },

    #[error("rollout produced a non-finite state at step {step}")]
    RolloutFailure { step: usize },

    #[error("checkpoint config mismatch on key `{key}`: expected {expected}, found {found}")]
    CheckpointMismatch {
        key: String,
        expected: String,
        found: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn numerical(stage: impl Into<String>) -> Self {
        Error::NumericalFailure {
            stage: stage.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Structural(_) | Error::CheckpointMismatch { .. } => {
                ErrorKind::Config
            }
            Error::Degenerate(_)
            | Error::DataAvailability { .. }
            | Error::CorruptHeader { .. }
            | Error::ShapeMismatch { .. }
            | Error::NonFinite { .. }
            | Error::Io { .. }
            | Error::Parse { .. } => ErrorKind::Data,
            Error::NumericalFailure { .. }
            | Error::TrainingFailure { .. }
            | Error::RolloutFailure { .. } => ErrorKind::Numerical,
        }
    }
}

fn format_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 8;
    let mut s = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", dates.len() - SHOWN));
    }
    s
}
