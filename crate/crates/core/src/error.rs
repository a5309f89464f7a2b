use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no n-gram survives min_count = {min_count}")]
    EmptyVocabulary { min_count: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("example weights sum to zero")]
    AllZeroWeights,

    #[error("invalid example {id:?}: {reason}")]
    InvalidExample { id: String, reason: String },

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage} training did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        stage: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("LiSSA recursion diverged at step {step} (iterate norm {norm:.3e})")]
    ContractionViolated { step: usize, norm: f64 },

    #[error("inverse-HVP solver failed to converge for {failed} of {total} candidates")]
    SolverFailure { failed: usize, total: usize },

    #[error("no influence record for pool example {0:?}")]
    MissingRecord(String),

    #[error("requested {requested} examples but only {available} are available")]
    NTooLarge { requested: usize, available: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
