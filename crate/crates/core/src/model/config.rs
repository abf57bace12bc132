use serde::{Deserialize, Serialize};

use super::ModelError;

/// Decoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    #[serde(default)]
    pub n_kv_heads: Option<usize>,
    pub intermediate: usize,
    pub context_len: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-5
}

/// Preset names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 5] = ["tiny", "50m", "150m", "300m", "600m"];

impl ModelConfig {
    fn table(vocab: usize, layers: usize, hidden: usize, heads: usize, inter: usize, ctx: usize) -> Self {
        Self {
            vocab_size: vocab,
            n_layers: layers,
            hidden,
            n_heads: heads,
            n_kv_heads: None,
            intermediate: inter,
            context_len: ctx,
            rope_base: default_rope_base(),
            norm_eps: default_norm_eps(),
        }
    }

    /// The four released sizes plus a `tiny` desk-scale config.
    pub fn preset(name: &str) -> Option<Self> {
        let v = crate::tokenizer::DEFAULT_VOCAB_SIZE;
        Some(match name {
            "tiny" => Self::table(v, 2, 64, 4, 224, 256),
            "50m" => Self::table(v, 8, 576, 8, 1536, 2048),
            "150m" => Self::table(v, 16, 768, 12, 2048, 1024),
            "300m" => Self::table(v, 18, 1024, 16, 3584, 2048),
            "600m" => Self::table(v, 22, 1280, 20, 4480, 2048),
            _ => return None,
        })
    }

    pub fn kv_heads(&self) -> usize {
        self.n_kv_heads.unwrap_or(self.n_heads)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.kv_heads() * self.head_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("n_layers", self.n_layers),
            ("hidden", self.hidden),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.kv_heads()),
            ("intermediate", self.intermediate),
            ("context_len", self.context_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return bad(format!("hidden {} not divisible by n_heads {}", self.hidden, self.n_heads));
        }
        if !self.n_heads.is_multiple_of(self.kv_heads()) {
            return bad(format!("n_heads {} not divisible by n_kv_heads {}", self.n_heads, self.kv_heads()));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!("head_dim {} must be even for rotary embeddings", self.head_dim()));
        }
        if self.rope_base.is_nan() || self.rope_base <= 0.0 || self.norm_eps.is_nan() || self.norm_eps < 0.0 {
            return bad("rope_base must be > 0 and norm_eps >= 0".into());
        }
        Ok(())
    }

    /// Weights implied by the config: no biases, tied input/output embedding.
    pub fn count_parameters(&self) -> u64 {
        let h = self.hidden as u64;
        let kv = self.kv_dim() as u64;
        let attn = 2 * h * h + 2 * h * kv;
        let ffn = 3 * h * self.intermediate as u64;
        self.vocab_size as u64 * h + self.n_layers as u64 * (attn + ffn + 2 * h) + h
    }
}
