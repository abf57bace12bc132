use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{Parameters, Real, TensorKind};

/// AdamW and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    /// Defaults for a run of `total_steps`: floor at 10% of peak, warmup of
    /// 1% of the run (at least 10 steps, at most the whole run).
    pub fn new(peak_lr: f64, total_steps: u64) -> Self {
        Self {
            peak_lr,
            min_lr: 0.1 * peak_lr,
            warmup_steps: default_warmup(total_steps),
            total_steps,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            clip_norm: 1.0,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.warmup_steps > 0 && self.warmup_steps <= self.total_steps) {
            return bad(format!(
                "warmup_steps {} must be in 1..={} (total_steps)",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(0.0 <= self.min_lr && self.min_lr <= self.peak_lr && self.peak_lr.is_finite()) {
            return bad(format!("need 0 <= min_lr ({}) <= peak_lr ({})", self.min_lr, self.peak_lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0, 1)"));
            }
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}

pub fn default_warmup(total_steps: u64) -> u64 {
    (total_steps / 100).max(10).min(total_steps)
}

/// Linear warmup to `peak_lr`, then cosine decay to `min_lr` at `total_steps`.
pub fn lr_at_step(step: u64, cfg: &OptimizerConfig) -> Result<f64, TrainError> {
    if step > cfg.total_steps {
        return Err(TrainError::StepOutOfRange { step, total_steps: cfg.total_steps });
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let span = cfg.total_steps - cfg.warmup_steps;
    if span == 0 {
        return Ok(cfg.peak_lr);
    }
    let progress = (step - cfg.warmup_steps) as f64 / span as f64;
    Ok(cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Global L2 norm over every tensor, accumulated in f64.
pub fn global_norm<T: Real>(grads: &Parameters<T>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales all gradients by `clip_norm / norm` when the global norm exceeds
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut Parameters<T>, clip_norm: f64) -> Result<f64, TrainError> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(TrainError::NonFinite { step: None, what: format!("gradient norm {norm}") });
    }
    if norm > clip_norm {
        grads.scale(T::of(clip_norm / norm));
    }
    Ok(norm)
}

/// First and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Parameters<T>,
    pub v: Parameters<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One AdamW update of a single tensor at 1-based step `t`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Real>(
    theta: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    decay: bool,
    cfg: &OptimizerConfig,
) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let wd = if decay { T::of(cfg.weight_decay) } else { T::zero() };
    for i in 0..theta.len() {
        let gi = g[i];
        m[i] = b1 * m[i] + (T::one() - b1) * gi;
        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
    }
}

/// Applies one AdamW step with decoupled weight decay on matrices only.
pub fn adamw_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut OptimizerState<T>,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<(), TrainError> {
    let kinds = params.kinds();
    let shapes_ok = |p: &Parameters<T>| {
        p.tensors().len() == kinds.len() && p.tensors().iter().zip(params.tensors()).all(|(a, b)| a.len() == b.len())
    };
    if !(shapes_ok(grads) && shapes_ok(&state.m) && shapes_ok(&state.v)) {
        return Err(TrainError::Shape("gradients or optimizer state do not match parameters".into()));
    }
    state.step += 1;
    let t = state.step;
    let grads = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((theta, g), m), v), kind) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs).zip(kinds) {
        adamw_update(theta, g, m, v, t, lr, kind == TensorKind::Matrix, cfg);
    }
    Ok(())
}

pub fn tokens_per_parameter(token_count: f64, param_count: f64) -> f64 {
    token_count / param_count
}
