//! Losses, task weighting, gradients and the imitation-learning loop.

pub mod loss;
pub mod mgn;
pub mod model;
pub mod optim;
pub mod prepare;
pub mod sample;
pub mod train;

use thiserror::Error;

pub use loss::{l1l2, seg_loss, LossReport, TaskWeights};
pub use mgn::{mgn_update, MgnConfig};
pub use model::{ModelConfig, PolicyModel};
pub use prepare::{evaluate_routes, route_samples, routes_samples, Preprocessor};
pub use sample::{FrameInput, TrainSample};
pub use train::{train, HistoryRow, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("all task gradient norms are zero")]
    AllZeroGradients,
    #[error("empty split")]
    EmptySplit,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    TensorFile(#[from] crate::dataset::tensorfile::TensorFileError),
    #[error(transparent)]
    Control(#[from] crate::controller::ControlError),
    #[error(transparent)]
    Planner(#[from] crate::planner::PlannerError),
}
