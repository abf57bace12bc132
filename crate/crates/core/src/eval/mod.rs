//! Zero-shot scoring: length-normalized candidate likelihood for
//! multiple-choice questions and label classification.

mod scaling;
mod score;
mod tasks;

use thiserror::Error;

use crate::model::ModelError;

pub use scaling::{scaling_report, write_scaling_csv, ScalingRow};
pub use score::{score_candidate, CandidateScore, LanguageModel};
pub use tasks::{
    evaluate_classification, evaluate_mc, read_cls_items, read_mc_items, ClsItem, EvalReport, ItemResult, McItem,
    SkippedItem, TaskConfig, TaskKind, DEFAULT_CLS_TEMPLATE, DEFAULT_MC_TEMPLATE, DEFAULT_MC_TEMPLATE_NO_CONTEXT,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("candidate encodes to no tokens")]
    EmptyCandidate,
    #[error("prompt and candidate need {len} tokens but the context holds {context_len}")]
    ContextOverflow { len: usize, context_len: usize },
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("invalid task config: {0}")]
    Config(String),
    #[error("tokenizer has no end-of-text token to condition an empty prompt on")]
    NoEndOfText,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
