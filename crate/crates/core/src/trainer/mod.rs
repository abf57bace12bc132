//! AdamW with a warmup-plus-cosine schedule, global-norm clipping, and a
//! deterministic block-packed training loop with resumable checkpoints.

mod optim;
mod run;

use thiserror::Error;

use crate::model::ModelError;
use crate::tokenizer::TokenizerError;

pub use optim::{
    adamw_step, adamw_update, clip_gradients, default_warmup, global_norm, lr_at_step, tokens_per_parameter,
    OptimizerConfig, OptimizerState,
};
pub use run::{
    batch_loss_and_grad, default_peak_lr, load_optimizer_state, read_loss_trace, run_training, save_optimizer_state,
    train, write_loss_trace, BatchPlan, CheckpointMeta, OptimizerOverrides, RunConfig, RunSummary, StepRecord,
    OPTIMIZER_MAGIC,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: u64, total_steps: u64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what}{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { step: Option<u64>, what: String },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("run config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("loss trace: {0}")]
    Csv(#[from] csv::Error),
}

impl TrainError {
    /// Whether the failure comes from the configuration rather than the data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            TrainError::Config(_) | TrainError::StepOutOfRange { .. } | TrainError::Json(_) | TrainError::Resume(_)
        ) || matches!(self, TrainError::Model(ModelError::Config(_)))
    }
}
