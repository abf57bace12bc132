//! Toolkit for building small dedicated language models for low-resource
//! languages.
//!
//! The crate is split along the workflow:
//!
//! - [`corpus`]: nine-stage document cleaning with exact MD5 deduplication.
//! - [`tokenizer`]: byte-level BPE training, encoding, fertility analysis and
//!   fixed-length block packing.
//! - [`model`]: a Llama-style decoder (RMSNorm, RoPE, SwiGLU, tied embeddings)
//!   with a hand-written backward pass.
//! - [`trainer`]: AdamW, cosine schedule with linear warmup, global-norm
//!   clipping and the training loop.
//! - [`eval`]: zero-shot likelihood scoring for multiple-choice and
//!   classification tasks.

pub mod corpus;
pub mod eval;
pub mod io;
pub mod model;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{Document, PipelineReport, StageConfig};
pub use eval::{EvalReport, LanguageModel};
pub use model::{ModelConfig, Parameters, Transformer};
pub use tokenizer::{FertilityReport, TokenizerModel};
pub use trainer::{OptimizerConfig, OptimizerState, RunConfig};
