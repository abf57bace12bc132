//! Dense building blocks and their derivatives. All matrices are row-major.

use super::Real;

/// `a (m×k) · b (k×n)`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (o, &bpj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bpj;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `out (m×n) += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn matmul_at_acc<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let bp = &b[p * n..(p + 1) * n];
        for (i, &api) in a[p * m..(p + 1) * m].iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            for (o, &bpj) in out[i * n..(i + 1) * n].iter_mut().zip(bp) {
                *o += api * bpj;
            }
        }
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y_i = x_i / sqrt(mean(x²) + eps) · w_i`.
pub fn rms_norm<T: Real>(x: &[T], w: &[T], eps: f64) -> Vec<T> {
    rms_norm_rows(x, w, 1, x.len(), eps).0
}

/// Row-wise RMSNorm. Also returns each row's `1 / rms`.
pub fn rms_norm_rows<T: Real>(x: &[T], w: &[T], rows: usize, dim: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); rows * dim];
    let mut inv = vec![T::zero(); rows];
    let n = T::of(dim as f64);
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let ms = dot(xr, xr) / n;
        let s = T::one() / (ms + T::of(eps)).sqrt();
        inv[r] = s;
        for ((yo, &xi), &wi) in y[r * dim..(r + 1) * dim].iter_mut().zip(xr).zip(w) {
            *yo = xi * s * wi;
        }
    }
    (y, inv)
}

/// Backward of [`rms_norm_rows`]. Accumulates into `dw`, returns `dx`.
pub fn rms_norm_rows_backward<T: Real>(
    dy: &[T],
    x: &[T],
    inv: &[T],
    w: &[T],
    rows: usize,
    dim: usize,
    dw: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * dim];
    let n = T::of(dim as f64);
    for r in 0..rows {
        let (xr, dyr, s) = (&x[r * dim..(r + 1) * dim], &dy[r * dim..(r + 1) * dim], inv[r]);
        // g = dL/d(x·s); dx = s·(g − x̂·mean(g·x̂)) with x̂ = x·s.
        let mut proj = T::zero();
        for i in 0..dim {
            let xhat = xr[i] * s;
            dw[i] += dyr[i] * xhat;
            proj += dyr[i] * w[i] * xhat;
        }
        proj /= n;
        for i in 0..dim {
            let xhat = xr[i] * s;
            dx[r * dim + i] = s * (dyr[i] * w[i] - xhat * proj);
        }
    }
    dx
}

/// Rotation angles for positions `0..seq` and one head width.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> RopeTable<T> {
    pub fn new(seq: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq * half);
        let mut sin = Vec::with_capacity(seq * half);
        for p in 0..seq {
            for i in 0..half {
                let theta = base.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = p as f64 * theta;
                cos.push(T::of(angle.cos()));
                sin.push(T::of(angle.sin()));
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates every head of every row in place. `inverse` rotates by the
    /// negative angle, which is the transpose used in the backward pass.
    pub fn apply(&self, x: &mut [T], seq: usize, n_heads: usize, inverse: bool) {
        let hd = self.half * 2;
        let width = n_heads * hd;
        for p in 0..seq {
            for h in 0..n_heads {
                let base = p * width + h * hd;
                for i in 0..self.half {
                    let (c, mut s) = (self.cos[p * self.half + i], self.sin[p * self.half + i]);
                    if inverse {
                        s = -s;
                    }
                    let (a, b) = (x[base + 2 * i], x[base + 2 * i + 1]);
                    x[base + 2 * i] = a * c - b * s;
                    x[base + 2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
}

/// Rotates consecutive pairs of one head vector by `pos · base^(−2i/d)`.
pub fn rope_apply<T: Real>(x: &[T], pos: usize, base: f64) -> Vec<T> {
    let table = RopeTable::new(pos + 1, x.len(), base);
    let mut out = vec![T::zero(); (pos + 1) * x.len()];
    out[pos * x.len()..].copy_from_slice(x);
    table.apply(&mut out, pos + 1, 1, false);
    out.split_off(pos * x.len())
}

pub fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

pub fn silu<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

pub fn silu_grad<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

/// `W_downᵀ · (silu(W_gateᵀ x) ⊙ W_upᵀ x)` for one vector.
pub fn swiglu_ffn<T: Real>(x: &[T], w_gate: &[T], w_up: &[T], w_down: &[T], intermediate: usize) -> Vec<T> {
    let h = x.len();
    let g = matmul(x, w_gate, 1, h, intermediate);
    let u = matmul(x, w_up, 1, h, intermediate);
    let s: Vec<T> = g.iter().zip(&u).map(|(&g, &u)| silu(g) * u).collect();
    matmul(&s, w_down, 1, intermediate, h)
}

/// Causal multi-head attention over `seq` positions.
///
/// `q` is `seq × (n_heads·d)`, `k` and `v` are `seq × (n_kv·d)`; query head `h`
/// reads kv head `h / (n_heads / n_kv)`. Returns the concatenated head outputs
/// and the attention probabilities, `n_heads × seq × seq`, zero above the
/// diagonal.
pub fn attention<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    seq: usize,
    n_heads: usize,
    n_kv: usize,
    head_dim: usize,
) -> (Vec<T>, Vec<T>) {
    let (qw, kw) = (n_heads * head_dim, n_kv * head_dim);
    let group = n_heads / n_kv;
    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let mut out = vec![T::zero(); seq * qw];
    let mut probs = vec![T::zero(); n_heads * seq * seq];
    for h in 0..n_heads {
        let g = h / group;
        for t in 0..seq {
            let qt = &q[t * qw + h * head_dim..t * qw + (h + 1) * head_dim];
            let row = &mut probs[(h * seq + t) * seq..(h * seq + t + 1) * seq];
            let mut max = T::neg_infinity();
            for s in 0..=t {
                let z = dot(qt, &k[s * kw + g * head_dim..s * kw + (g + 1) * head_dim]) * scale;
                row[s] = z;
                max = max.max(z);
            }
            let mut sum = T::zero();
            for r in row.iter_mut().take(t + 1) {
                *r = (*r - max).exp();
                sum += *r;
            }
            for r in row.iter_mut().take(t + 1) {
                *r /= sum;
            }
            let o = &mut out[t * qw + h * head_dim..t * qw + (h + 1) * head_dim];
            for s in 0..=t {
                let p = row[s];
                for (oi, &vi) in o.iter_mut().zip(&v[s * kw + g * head_dim..s * kw + (g + 1) * head_dim]) {
                    *oi += p * vi;
                }
            }
        }
    }
    (out, probs)
}

/// Backward of [`attention`] given its probabilities. Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Real>(
    d_out: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    seq: usize,
    n_heads: usize,
    n_kv: usize,
    head_dim: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (qw, kw) = (n_heads * head_dim, n_kv * head_dim);
    let group = n_heads / n_kv;
    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); seq];
    for h in 0..n_heads {
        let g = h / group;
        let (hq, hk) = (h * head_dim, g * head_dim);
        for t in 0..seq {
            let row = &probs[(h * seq + t) * seq..(h * seq + t + 1) * seq];
            let dot_t = &d_out[t * qw + hq..t * qw + hq + head_dim];
            let mut weighted = T::zero();
            for s in 0..=t {
                dp[s] = dot(dot_t, &v[s * kw + hk..s * kw + hk + head_dim]);
                weighted += dp[s] * row[s];
                for (dvi, &di) in dv[s * kw + hk..s * kw + hk + head_dim].iter_mut().zip(dot_t) {
                    *dvi += row[s] * di;
                }
            }
            for s in 0..=t {
                let dz = row[s] * (dp[s] - weighted) * scale;
                if dz == T::zero() {
                    continue;
                }
                for i in 0..head_dim {
                    dq[t * qw + hq + i] += dz * k[s * kw + hk + i];
                    dk[s * kw + hk + i] += dz * q[t * qw + hq + i];
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Row-wise log-softmax computed in double precision.
pub fn log_softmax_row<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|x| x.to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x.to_f64().unwrap() - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x.to_f64().unwrap() - lse).collect()
}

/// Mean next-token cross-entropy; `logits` is `targets.len() × vocab`.
pub fn cross_entropy<T: Real>(logits: &[T], targets: &[u32], vocab: usize) -> T {
    cross_entropy_with_grad(logits, targets, vocab, T::zero()).0
}

/// Loss plus `d(loss_scale · loss)/d logits`.
pub fn cross_entropy_with_grad<T: Real>(logits: &[T], targets: &[u32], vocab: usize, loss_scale: T) -> (T, Vec<T>) {
    let n = targets.len();
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = T::zero();
    let inv_n = T::one() / T::of(n as f64);
    for (t, &target) in targets.iter().enumerate() {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&x| (x - max).exp()).fold(T::zero(), |a, b| a + b);
        let lse = max + sum.ln();
        loss += lse - row[target as usize];
        if loss_scale != T::zero() {
            let g = &mut grad[t * vocab..(t + 1) * vocab];
            for (gi, &x) in g.iter_mut().zip(row) {
                *gi = (x - lse).exp() * inv_n * loss_scale;
            }
            g[target as usize] -= inv_n * loss_scale;
        }
    }
    (loss * inv_n, grad)
}
