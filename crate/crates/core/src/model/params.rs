use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real};

/// Whether a tensor is a weight matrix (decayed) or a norm gain (not decayed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Matrix,
    Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: TensorKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Vec<T>,
    /// hidden x hidden
    pub wq: Vec<T>,
    /// hidden x kv_dim
    pub wk: Vec<T>,
    /// hidden x kv_dim
    pub wv: Vec<T>,
    /// hidden x hidden
    pub wo: Vec<T>,
    pub ffn_norm: Vec<T>,
    /// hidden x intermediate
    pub w_gate: Vec<T>,
    /// hidden x intermediate
    pub w_up: Vec<T>,
    /// intermediate x hidden
    pub w_down: Vec<T>,
}

/// All trainable weights. The embedding doubles as the output projection.
/// Matrices are row-major and applied as `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    /// vocab_size x hidden
    pub embedding: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Vec<T>,
}

impl<T: Real> Parameters<T> {
    /// Names, shapes and kinds in the canonical order used by
    /// [`tensors`](Self::tensors), checkpoints and the optimizer.
    pub fn specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
        let (h, kv, i) = (cfg.hidden, cfg.kv_dim(), cfg.intermediate);
        let spec = |name: String, dims: Vec<usize>, kind| TensorSpec { name, dims, kind };
        let mut out = vec![spec("embedding".into(), vec![cfg.vocab_size, h], TensorKind::Matrix)];
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.push(spec(p("attn_norm"), vec![h], TensorKind::Norm));
            out.push(spec(p("wq"), vec![h, h], TensorKind::Matrix));
            out.push(spec(p("wk"), vec![h, kv], TensorKind::Matrix));
            out.push(spec(p("wv"), vec![h, kv], TensorKind::Matrix));
            out.push(spec(p("wo"), vec![h, h], TensorKind::Matrix));
            out.push(spec(p("ffn_norm"), vec![h], TensorKind::Norm));
            out.push(spec(p("w_gate"), vec![h, i], TensorKind::Matrix));
            out.push(spec(p("w_up"), vec![h, i], TensorKind::Matrix));
            out.push(spec(p("w_down"), vec![i, h], TensorKind::Matrix));
        }
        out.push(spec("final_norm".into(), vec![h], TensorKind::Norm));
        out
    }

    /// Builds parameters from tensors given in [`specs`](Self::specs) order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Vec<T>>) -> Option<Self> {
        let specs = Self::specs(cfg);
        if tensors.len() != specs.len() || specs.iter().zip(&tensors).any(|(s, t)| s.len() != t.len()) {
            return None;
        }
        let mut it = tensors.into_iter();
        let embedding = it.next()?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            layers.push(LayerParams {
                attn_norm: it.next()?,
                wq: it.next()?,
                wk: it.next()?,
                wv: it.next()?,
                wo: it.next()?,
                ffn_norm: it.next()?,
                w_gate: it.next()?,
                w_up: it.next()?,
                w_down: it.next()?,
            });
        }
        let final_norm = it.next()?;
        Some(Self { embedding, layers, final_norm })
    }

    /// Matrices drawn from N(0, std) with a seeded ChaCha stream; norm gains
    /// set to one.
    pub fn init(cfg: &ModelConfig, seed: u64, std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("std >= 0");
        let tensors = Self::specs(cfg)
            .iter()
            .map(|s| match s.kind {
                TensorKind::Norm => vec![T::one(); s.len()],
                TensorKind::Matrix => (0..s.len()).map(|_| T::of(normal.sample(&mut rng))).collect(),
            })
            .collect();
        Self::from_tensors(cfg, tensors).expect("specs match")
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let tensors = Self::specs(cfg).iter().map(|s| vec![T::zero(); s.len()]).collect();
        Self::from_tensors(cfg, tensors).expect("specs match")
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
        z
    }

    /// Kinds in [`tensors`](Self::tensors) order.
    pub fn kinds(&self) -> Vec<TensorKind> {
        use TensorKind::{Matrix, Norm};
        let mut out = vec![Matrix];
        for _ in &self.layers {
            out.extend([Norm, Matrix, Matrix, Matrix, Matrix, Norm, Matrix, Matrix, Matrix]);
        }
        out.push(Norm);
        out
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.extend([&l.attn_norm, &l.wq, &l.wk, &l.wv, &l.wo, &l.ffn_norm, &l.w_gate, &l.w_up, &l.w_down]);
        }
        out.push(&self.final_norm);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_norm,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ffn_norm,
                &mut l.w_gate,
                &mut l.w_up,
                &mut l.w_down,
            ]);
        }
        out.push(&mut self.final_norm);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect::<Vec<U>>();
        Parameters {
            embedding: conv(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: conv(&l.attn_norm),
                    wq: conv(&l.wq),
                    wk: conv(&l.wk),
                    wv: conv(&l.wv),
                    wo: conv(&l.wo),
                    ffn_norm: conv(&l.ffn_norm),
                    w_gate: conv(&l.w_gate),
                    w_up: conv(&l.w_up),
                    w_down: conv(&l.w_down),
                })
                .collect(),
            final_norm: conv(&self.final_norm),
        }
    }
}
