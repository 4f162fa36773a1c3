//! Runs the positioning pipeline over a simulated dataset and scores it against the truth.

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rtk;

pub use config::{Mode, PipelineParams, RunConfig};
pub use metrics::{compute_metrics, EpochStatus, MetricsError, MetricsReport};
pub use pipeline::{run_on, run_pipeline, AdopRow, RunOutput, SkyRow};

use canyon_rtk::fgo::FgoError;
use canyon_rtk::io::DatasetError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] canyon_sim::SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<FgoError> for EvalError {
    fn from(e: FgoError) -> Self {
        EvalError::Solver(e.to_string())
    }
}

impl EvalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for anything wrong with the inputs, 3 when the estimator fails.
    pub fn exit_code(&self) -> u8 {
        match self {
            EvalError::Solver(_) => 3,
            _ => 2,
        }
    }
}
