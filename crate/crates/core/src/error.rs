use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for `{param}` ({steps} steps)")]
    Bounds {
        param: String,
        index: usize,
        steps: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("infeasible topology at {layer}: {reason}")]
    InfeasibleTopology { layer: String, reason: String },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("cannot normalize by a non-positive reference objective ({0})")]
    Normalization(f64),

    #[error("{path}: malformed file at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("evaluator failed: {0}")]
    Evaluator(String),

    #[error(
        "no candidate accepted after {proposals} proposals at iteration {iteration} \
         (front size {front_size}, last predicted error {last_prediction:.4})"
    )]
    Stall {
        iteration: usize,
        proposals: usize,
        front_size: usize,
        last_prediction: f64,
    },

    #[error("design space has {size} configurations, above the ceiling of {ceiling}")]
    SpaceTooLarge { size: u128, ceiling: u128 },

    #[error("cannot resume from {path}: {reason} (last valid record: {last_valid:?})")]
    Resume {
        path: PathBuf,
        reason: String,
        last_valid: Option<usize>,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
