//! Llama-style decoder with a hand-written backward pass.

mod checkpoint;
mod config;
pub mod ops;
mod params;
mod transformer;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

pub use checkpoint::{read_tensors, write_tensors, Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, PRESETS};
pub use params::{LayerParams, Parameters, TensorKind, TensorSpec};
pub use transformer::{ActivationTape, Transformer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar type for model math: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
}
