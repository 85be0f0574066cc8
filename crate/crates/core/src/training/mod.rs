//! Loss, AdamW, the early-stopping epoch loop and classification metrics.

mod config;
mod fit;
mod metrics;
mod optim;
mod trainer;

pub use config::TrainConfig;
pub use fit::{fit, EpochModel, EpochRecord, StopReason, TrainHistory, ValSummary};
pub use metrics::{ClassMetrics, Metrics};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use trainer::{
    argmax, batch_tensor, cross_entropy, evaluate, evaluate_with_loss, predict, train,
    train_with_progress, Evaluation, SwinTrainer, TrainOutcome,
};
