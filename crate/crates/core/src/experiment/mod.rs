//! Run orchestration: pretraining, the federated round loop, sweeps and
//! persistence of their outputs.

pub mod config;
pub mod presets;
pub mod report;
mod runner;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{DataSource, RunConfig};
pub use presets::ScenarioPreset;
pub use runner::*;
pub use sweep::{run_sweep, AedRow, SweepAxis, SweepOutcome};

use crate::data::DataError;
use crate::federation::FedError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::snapshot::SnapshotError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output directory {0} already holds a run; pass --overwrite to replace it")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federation(#[from] FedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run aborted: {0}")]
    Aborted(String),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::OutputExists(_) => 2,
            // The data is fine but the partition sizes asked for too much of it.
            ExperimentError::Data(
                DataError::NotEnoughExamples { .. }
                | DataError::InvalidRequest(_)
                | DataError::TooFewExamples(_)
                | DataError::AllLabelsExcluded,
            ) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| ExperimentError::Io { path, source }
    }
}
