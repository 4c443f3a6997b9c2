//! End-to-end experiment: data generation, baseline training, pruning,
//! layer removal, Sobolev fine-tuning, evaluation and the summary table.
//!
//! Every stage reads its inputs from, and writes its outputs to, one run
//! directory. Each artifact carries the hash of the configuration that made
//! it, and a stage refuses inputs produced under a different configuration.

mod config;
mod report;
mod stages;

pub use config::{
    DataSection, ExperimentConfig, MarketSection, NetworkSection, PruneSection, ScheduleSection,
    SobolevSection, TrainSection, CONFIG_VERSION,
};
pub use report::{cmd_report, RunReport, Summary};
pub use stages::{
    cmd_all, cmd_evaluate, cmd_finetune, cmd_generate, cmd_prune, cmd_train, evaluate_model,
    Manifest, StageModel, STAGES,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::market::{DatasetError, MarketError};
use crate::network::NetworkError;
use crate::pruning::PruningError;
use crate::training::TrainingError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path} was produced by config {found}, current config is {expected}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("corrupt artifact {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
}

impl PipelineError {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::HashMismatch { .. } => 2,
            PipelineError::MissingArtifact(_) | PipelineError::Corrupt { .. } => 3,
            PipelineError::Numerical(_) => 4,
            PipelineError::Io { .. } => 1,
        }
    }
}

impl From<TrainingError> for PipelineError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Diverged { .. } | TrainingError::NonFiniteGradient(_) => {
                PipelineError::Numerical(e.to_string())
            }
            TrainingError::InvalidConfig(msg) => PipelineError::Config(msg),
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<PruningError> for PipelineError {
    fn from(e: PruningError) -> Self {
        match e {
            PruningError::Training(t) => t.into(),
            PruningError::InvalidConfig(msg) => PipelineError::Config(msg),
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<NetworkError> for PipelineError {
    fn from(e: NetworkError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<MarketError> for PipelineError {
    fn from(e: MarketError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}
