use std::path::PathBuf;

use thiserror::Error;

use crate::data::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid class vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("sample {sample} of the training split has a positive label for unseen class '{class}'")]
    InductiveViolation { sample: usize, class: String },

    #[error("invalid dataset ({} violation(s)); first: {}", .0.len(), .0[0])]
    InvalidDataset(Vec<Violation>),

    #[error("label vector has no positive entries")]
    NoPositiveLabels,

    #[error("zero-norm vector in {0}")]
    DegenerateVector(String),

    #[error("non-finite gradient in tensor '{0}'")]
    NonFiniteGradient(String),

    #[error("non-finite total loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("AUROC undefined: labels contain a single class")]
    UndefinedAuroc,

    #[error("no AUROC values available for the {0} partition")]
    EmptyPartition(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("every grid-search run failed; last error: {0}")]
    AllRunsFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    /// True for errors caused by malformed user data or configuration rather
    /// than by a failure while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Json { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFinite(_)
                | Error::InvalidVocabulary(_)
                | Error::InductiveViolation { .. }
                | Error::InvalidDataset(_)
                | Error::InvalidConfig(_)
                | Error::InfeasibleSpec(_)
        )
    }
}
