use std::io::Cursor;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, clip_gradients, default_warmup, lr_at_step, tokens_per_parameter};
use super::{OptimizerConfig, OptimizerState, TrainError};
use crate::io::{read_magic, read_u32, read_u64, write_atomic};
use crate::model::{read_tensors, write_tensors, Checkpoint, ModelConfig, NamedTensor, Parameters, Real, Transformer};
use crate::tokenizer::BlockFile;

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"TKOS";
const OPTIMIZER_VERSION: u32 = 1;

/// Which blocks make up each step. Every epoch is a fresh seeded permutation
/// of all blocks; its last batch may be short.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub n_blocks: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn steps_per_epoch(&self) -> u64 {
        self.n_blocks.div_ceil(self.batch_size) as u64
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let mut order: Vec<usize> = (0..self.n_blocks).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Epoch and position range for 1-based `step`.
    fn locate(&self, step: u64) -> (u64, std::ops::Range<usize>) {
        let spe = self.steps_per_epoch();
        let s = step - 1;
        let i = (s % spe) as usize;
        (s / spe, i * self.batch_size..((i + 1) * self.batch_size).min(self.n_blocks))
    }

    pub fn batch(&self, step: u64) -> Vec<usize> {
        let (epoch, range) = self.locate(step);
        self.epoch_order(epoch)[range].to_vec()
    }

    /// Blocks consumed by steps `1..=step`.
    pub fn blocks_through(&self, step: u64) -> u64 {
        if step == 0 {
            return 0;
        }
        let (epoch, range) = self.locate(step);
        epoch * self.n_blocks as u64 + range.end as u64
    }
}

/// One row of the loss trace. `loss` is measured on the step's batch before
/// its update; `lr` is the rate that update used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub tokens_seen: u64,
}

/// Mean loss over the given blocks and its gradient. Blocks are processed in
/// parallel, and their gradients are summed in the given order, so the result
/// does not depend on the thread count.
pub fn batch_loss_and_grad<T: Real>(
    model: &Transformer<T>,
    blocks: &BlockFile,
    indices: &[usize],
) -> Result<(f64, Parameters<T>), TrainError> {
    let scale = T::of(1.0 / indices.len() as f64);
    let mut total = model.params.zeros_like();
    let mut loss = 0.0f64;
    let chunk = rayon::current_num_threads().max(1);
    for group in indices.chunks(chunk) {
        let results: Vec<_> =
            group.par_iter().map(|&i| model.loss_and_grad(blocks.block(i), scale)).collect::<Result<_, _>>()?;
        for (l, g) in results {
            loss += l.to_f64().unwrap_or(f64::NAN);
            total.add_assign(&g);
        }
    }
    Ok((loss / indices.len() as f64, total))
}

/// Trains from `state.step + 1` through `opt.total_steps`. Each step runs
/// forward and backward on its batch, clips, and applies AdamW at
/// `lr_at_step(step)`. `on_step` runs after every update; an error from it
/// stops training. A non-finite loss, gradient norm or weight aborts before
/// the offending update is kept by any checkpoint.
pub fn train<T: Real, F>(
    model: &mut Transformer<T>,
    blocks: &BlockFile,
    opt: &OptimizerConfig,
    plan: &BatchPlan,
    state: &mut OptimizerState<T>,
    mut on_step: F,
) -> Result<Vec<StepRecord>, TrainError>
where
    F: FnMut(&StepRecord, &Transformer<T>, &OptimizerState<T>) -> Result<(), TrainError>,
{
    opt.validate()?;
    if blocks.block_count() == 0 || plan.n_blocks != blocks.block_count() || plan.batch_size == 0 {
        return Err(TrainError::Config(format!(
            "{} blocks with batch size {} cannot be trained",
            blocks.block_count(),
            plan.batch_size
        )));
    }
    if blocks.block_len > model.cfg.context_len {
        return Err(TrainError::Config(format!(
            "block length {} exceeds context length {}",
            blocks.block_len, model.cfg.context_len
        )));
    }
    if blocks.vocab_size > model.cfg.vocab_size {
        return Err(TrainError::Config(format!(
            "blocks use a vocabulary of {} but the model has {}",
            blocks.vocab_size, model.cfg.vocab_size
        )));
    }
    if state.step > opt.total_steps {
        return Err(TrainError::StepOutOfRange { step: state.step, total_steps: opt.total_steps });
    }

    let mut records = Vec::new();
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for step in state.step + 1..=opt.total_steps {
        let (epoch, range) = plan.locate(step);
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, plan.epoch_order(epoch)));
        }
        let indices = &cached.as_ref().expect("cached epoch").1[range];

        let (loss, mut grads) = batch_loss_and_grad(model, blocks, indices)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step: Some(step), what: format!("loss {loss}") });
        }
        let grad_norm = clip_gradients(&mut grads, opt.clip_norm).map_err(|e| match e {
            TrainError::NonFinite { what, .. } => TrainError::NonFinite { step: Some(step), what },
            other => other,
        })?;
        let lr = lr_at_step(step, opt)?;
        adamw_step(&mut model.params, &grads, state, opt, lr)?;
        if !model.params.is_finite() {
            return Err(TrainError::NonFinite { step: Some(step), what: "weights after update".into() });
        }
        let record =
            StepRecord { step, lr, loss, grad_norm, tokens_seen: plan.blocks_through(step) * blocks.block_len as u64 };
        on_step(&record, model, state)?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_loss_trace(path: &Path, records: &[StepRecord]) -> Result<(), TrainError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in records {
            w.serialize(r)?;
        }
        if records.is_empty() {
            w.write_record(["step", "lr", "loss", "grad_norm", "tokens_seen"])?;
        }
        w.flush()?;
    }
    write_atomic(path, |w| w.write_all(&buf))?;
    Ok(())
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<StepRecord>, TrainError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes moments and step count: magic, version, step, then `m.*` and `v.*`
/// tensors in parameter order.
pub fn save_optimizer_state<T: Real>(path: &Path, cfg: &ModelConfig, state: &OptimizerState<T>) -> std::io::Result<()> {
    let specs = Parameters::<T>::specs(cfg);
    let mut tensors = Vec::with_capacity(2 * specs.len());
    for (prefix, p) in [("m", &state.m), ("v", &state.v)] {
        for (s, t) in specs.iter().zip(p.tensors()) {
            tensors.push(NamedTensor {
                name: format!("{prefix}.{}", s.name),
                dims: s.dims.clone(),
                data: t.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect(),
            });
        }
    }
    write_atomic(path, |w| {
        w.write_all(OPTIMIZER_MAGIC)?;
        w.write_all(&OPTIMIZER_VERSION.to_le_bytes())?;
        w.write_all(&state.step.to_le_bytes())?;
        write_tensors(w, &tensors)
    })
}

pub fn load_optimizer_state<T: Real>(path: &Path, cfg: &ModelConfig) -> Result<OptimizerState<T>, TrainError> {
    let bytes = std::fs::read(path)?;
    let bad = |m: String| TrainError::Resume(format!("{}: {m}", path.display()));
    let mut r = Cursor::new(&bytes[..]);
    read_magic(&mut r, OPTIMIZER_MAGIC).map_err(|e| bad(e.to_string()))?;
    let version = read_u32(&mut r)?;
    if version != OPTIMIZER_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let step = read_u64(&mut r)?;
    let tensors = read_tensors(&mut r)?;
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    let specs = Parameters::<T>::specs(cfg);
    if tensors.len() != 2 * specs.len() {
        return Err(bad(format!("expected {} tensors, found {}", 2 * specs.len(), tensors.len())));
    }
    let (m, v) = tensors.split_at(specs.len());
    let build = |prefix: &str, ts: &[NamedTensor]| -> Result<Parameters<T>, TrainError> {
        for (s, t) in specs.iter().zip(ts) {
            if t.name != format!("{prefix}.{}", s.name) || t.dims != s.dims {
                return Err(bad(format!("unexpected tensor {}", t.name)));
            }
        }
        let data = ts.iter().map(|t| t.data.iter().map(|&x| T::of(x as f64)).collect()).collect();
        Parameters::from_tensors(cfg, data).ok_or_else(|| bad("tensor sizes".into()))
    };
    let m = build("m", m)?;
    let v = build("v", v)?;
    if v.tensors().iter().any(|t| t.iter().any(|&x| x < T::zero())) {
        return Err(bad("negative second moment".into()));
    }
    Ok(OptimizerState { step, m, v })
}

/// Optional replacements for the derived optimizer defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerOverrides {
    pub peak_lr: Option<f64>,
    pub min_lr: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub weight_decay: Option<f64>,
    pub clip_norm: Option<f64>,
    pub eps: Option<f64>,
}

/// Training run description, read from JSON. Relative paths are resolved
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Block file written by `pretokenize`.
    pub blocks: PathBuf,
    /// Preset name; its vocabulary size is taken from the block file.
    #[serde(default)]
    pub preset: Option<String>,
    /// Inline model config, used when no preset is given.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub optimizer: OptimizerOverrides,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Defaults to one epoch.
    #[serde(default)]
    pub steps: Option<u64>,
    /// Checkpoint every this many steps; 0 saves only the final model.
    #[serde(default)]
    pub checkpoint_interval: u64,
    pub output_dir: PathBuf,
}

fn default_batch_size() -> usize {
    64
}

pub fn default_peak_lr(preset: Option<&str>) -> f64 {
    match preset {
        Some("50m") => 6e-4,
        _ => 3e-4,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.blocks = base.join(&cfg.blocks);
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn model_config(&self, block_vocab: usize) -> Result<ModelConfig, TrainError> {
        let cfg = match (&self.preset, &self.model) {
            (Some(name), None) => {
                let mut c =
                    ModelConfig::preset(name).ok_or_else(|| TrainError::Config(format!("unknown preset {name:?}")))?;
                c.vocab_size = block_vocab;
                c
            }
            (None, Some(c)) => c.clone(),
            _ => return Err(TrainError::Config("give exactly one of \"preset\" and \"model\"".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optimizer_config(&self, total_steps: u64) -> Result<OptimizerConfig, TrainError> {
        let o = &self.optimizer;
        let peak = o.peak_lr.unwrap_or_else(|| default_peak_lr(self.preset.as_deref()));
        let d = OptimizerConfig::new(peak, total_steps);
        let cfg = OptimizerConfig {
            peak_lr: peak,
            min_lr: o.min_lr.unwrap_or(d.min_lr),
            warmup_steps: o.warmup_steps.unwrap_or(default_warmup(total_steps)),
            total_steps,
            beta1: o.beta1.unwrap_or(d.beta1),
            beta2: o.beta2.unwrap_or(d.beta2),
            weight_decay: o.weight_decay.unwrap_or(d.weight_decay),
            clip_norm: o.clip_norm.unwrap_or(d.clip_norm),
            eps: o.eps.unwrap_or(d.eps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sidecar JSON written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub tokens_seen: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// File names relative to the sidecar.
    pub checkpoint: String,
    pub optimizer_state: String,
}

impl CheckpointMeta {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub tokens_seen: u64,
    pub parameters: u64,
    pub tokens_per_parameter: f64,
}

fn save_all(
    dir: &Path,
    stem: &str,
    model: &Transformer<f32>,
    state: &OptimizerState<f32>,
    meta_base: &CheckpointMeta,
    tokens_seen: u64,
) -> Result<PathBuf, TrainError> {
    let ckpt = dir.join(format!("{stem}.tkcp"));
    let optim = dir.join(format!("{stem}.optim"));
    Checkpoint::from_model(model).save(&ckpt)?;
    save_optimizer_state(&optim, &model.cfg, state)?;
    let meta = CheckpointMeta {
        step: state.step,
        tokens_seen,
        checkpoint: format!("{stem}.tkcp"),
        optimizer_state: format!("{stem}.optim"),
        ..meta_base.clone()
    };
    let json = serde_json::to_string_pretty(&meta)?;
    write_atomic(&dir.join(format!("{stem}.json")), |w| w.write_all(json.as_bytes()))?;
    Ok(ckpt)
}

/// Runs a training job from its config, optionally resuming from a
/// checkpoint written by an earlier run of the same config. Writes
/// `checkpoint-<step>.*` at the configured interval, `model.*` at the end and
/// `loss.csv` throughout. On failure the trace so far is still written and
/// earlier checkpoints are left untouched.
pub fn run_training(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunSummary, TrainError> {
    let blocks = BlockFile::load(&cfg.blocks)?;
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    if blocks.block_count() == 0 {
        return Err(TrainError::Config(format!("{} holds no blocks", cfg.blocks.display())));
    }
    let model_cfg = cfg.model_config(blocks.vocab_size)?;
    let plan = BatchPlan { n_blocks: blocks.block_count(), batch_size: cfg.batch_size, seed: cfg.seed };
    let total_steps = cfg.steps.unwrap_or_else(|| plan.steps_per_epoch());
    let opt = cfg.optimizer_config(total_steps)?;
    let trace_path = cfg.output_dir.join("loss.csv");

    let (mut model, mut state, mut trace) = match resume {
        None => {
            let model = Transformer::<f32>::init(model_cfg.clone(), cfg.seed)?;
            let state = OptimizerState::new(&model.params);
            (model, state, Vec::new())
        }
        Some(path) => {
            let meta = CheckpointMeta::load(&path.with_extension("json"))?;
            if meta.model != model_cfg
                || meta.optimizer != opt
                || meta.seed != cfg.seed
                || meta.batch_size != cfg.batch_size
            {
                return Err(TrainError::Resume("checkpoint was written by a different run config".into()));
            }
            let dir = path.parent().unwrap_or(Path::new(""));
            let model = Checkpoint::load(&dir.join(&meta.checkpoint))?.into_model()?;
            let state: OptimizerState<f32> = load_optimizer_state(&dir.join(&meta.optimizer_state), &model.cfg)?;
            if state.step != meta.step {
                return Err(TrainError::Resume("optimizer state and sidecar disagree on the step".into()));
            }
            let trace = if trace_path.exists() {
                read_loss_trace(&trace_path)?.into_iter().filter(|r| r.step <= meta.step).collect()
            } else {
                Vec::new()
            };
            (model, state, trace)
        }
    };

    let meta_base = CheckpointMeta {
        step: 0,
        tokens_seen: 0,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        model: model_cfg.clone(),
        optimizer: opt.clone(),
        checkpoint: String::new(),
        optimizer_state: String::new(),
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    let result = train(&mut model, &blocks, &opt, &plan, &mut state, |rec, m, st| {
        trace.push(rec.clone());
        if cfg.checkpoint_interval > 0 && rec.step % cfg.checkpoint_interval == 0 && rec.step < total_steps {
            save_all(&cfg.output_dir, &format!("checkpoint-{:08}", rec.step), m, st, &meta_base, rec.tokens_seen)?;
            write_loss_trace(&trace_path, &trace)?;
        }
        Ok(())
    });
    write_loss_trace(&trace_path, &trace)?;
    result?;

    let tokens_seen = plan.blocks_through(state.step) * blocks.block_len as u64;
    let checkpoint = save_all(&cfg.output_dir, "model", &model, &state, &meta_base, tokens_seen)?;
    let parameters = model_cfg.count_parameters();
    Ok(RunSummary {
        checkpoint,
        loss_trace: trace_path,
        steps: state.step,
        final_loss: trace.last().map(|r| r.loss),
        tokens_seen,
        parameters,
        tokens_per_parameter: tokens_per_parameter(tokens_seen as f64, parameters as f64),
    })
}
