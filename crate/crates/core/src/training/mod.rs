//! Optimizer, learning-rate schedule, value and Sobolev training, metrics.

mod adam;
mod loss;
mod metrics;
mod schedule;
mod trainer;

pub use adam::AdamState;
pub use loss::{mse_loss, sobolev_loss, LossBreakdown, LossWeights, NormalizedData};
pub use metrics::{
    evaluate, r2_score, write_points_csv, AnalyticOracle, EvalPoint, EvaluationReport, Surrogate,
};
pub use schedule::OneCycleConfig;
pub use trainer::{
    teacher_dataset, train_mse, train_sobolev, write_log_csv, DerivativeSource, EpochLog,
    SobolevConfig, TrainConfig,
};

use thiserror::Error;

use crate::market::{DatasetError, MarketError};
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("empty dataset or batch")]
    EmptyDataset,
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient component {0}")]
    NonFiniteGradient(usize),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("derivative targets required for a positive lambda")]
    MissingDerivatives,
    #[error("targets are constant; R² undefined")]
    ConstantTargets,
    #[error("evaluation grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
