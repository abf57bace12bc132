use super::ops::{
    attention, attention_backward, cross_entropy_with_grad, matmul, matmul_at_acc, matmul_bt, rms_norm_rows,
    rms_norm_rows_backward, silu, silu_grad, RopeTable,
};
use super::{ModelConfig, ModelError, Parameters, Real};

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTape<T> {
    x_in: Vec<T>,
    attn_inv_rms: Vec<T>,
    attn_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    heads: Vec<T>,
    x_mid: Vec<T>,
    ffn_inv_rms: Vec<T>,
    ffn_in: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

/// Everything a forward pass produced that the backward pass needs.
#[derive(Debug, Clone)]
pub struct ActivationTape<T> {
    ids: Vec<u32>,
    layers: Vec<LayerTape<T>>,
    x_final: Vec<T>,
    final_inv_rms: Vec<T>,
    normed: Vec<T>,
    rope: RopeTable<T>,
}

impl<T> ActivationTape<T> {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }
}

/// A decoder-only transformer: token embedding, `n_layers` pre-norm blocks of
/// rotary attention and SwiGLU, a final RMSNorm, and logits through the
/// transposed embedding.
#[derive(Debug, Clone)]
pub struct Transformer<T> {
    pub cfg: ModelConfig,
    pub params: Parameters<T>,
}

impl<T: Real> Transformer<T> {
    pub fn new(cfg: ModelConfig, params: Parameters<T>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let specs = Parameters::<T>::specs(&cfg);
        let tensors = params.tensors();
        if specs.len() != tensors.len() || specs.iter().zip(&tensors).any(|(s, t)| s.len() != t.len()) {
            return Err(ModelError::Shape("parameters do not match config".into()));
        }
        Ok(Self { cfg, params })
    }

    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let params = Parameters::init(&cfg, seed, 0.02);
        Ok(Self { cfg, params })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if ids.len() > self.cfg.context_len {
            return Err(ModelError::ContextOverflow { len: ids.len(), context_len: self.cfg.context_len });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab_size: self.cfg.vocab_size });
        }
        Ok(())
    }

    /// Returns `seq × vocab` logits and the activation tape.
    pub fn forward(&self, ids: &[u32]) -> Result<(Vec<T>, ActivationTape<T>), ModelError> {
        self.check_ids(ids)?;
        let c = &self.cfg;
        let (seq, h, kv, inter) = (ids.len(), c.hidden, c.kv_dim(), c.intermediate);
        let (nh, nkv, hd) = (c.n_heads, c.kv_heads(), c.head_dim());
        let rope = RopeTable::new(seq, hd, c.rope_base);

        let mut x = Vec::with_capacity(seq * h);
        for &id in ids {
            x.extend_from_slice(&self.params.embedding[id as usize * h..(id as usize + 1) * h]);
        }

        let mut layers = Vec::with_capacity(c.n_layers);
        for lp in &self.params.layers {
            let x_in = x.clone();
            let (attn_in, attn_inv_rms) = rms_norm_rows(&x, &lp.attn_norm, seq, h, c.norm_eps);
            let mut q = matmul(&attn_in, &lp.wq, seq, h, h);
            let mut k = matmul(&attn_in, &lp.wk, seq, h, kv);
            let v = matmul(&attn_in, &lp.wv, seq, h, kv);
            rope.apply(&mut q, seq, nh, false);
            rope.apply(&mut k, seq, nkv, false);
            let (heads, probs) = attention(&q, &k, &v, seq, nh, nkv, hd);
            let o = matmul(&heads, &lp.wo, seq, h, h);
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);

            let x_mid = x.clone();
            let (ffn_in, ffn_inv_rms) = rms_norm_rows(&x, &lp.ffn_norm, seq, h, c.norm_eps);
            let gate = matmul(&ffn_in, &lp.w_gate, seq, h, inter);
            let up = matmul(&ffn_in, &lp.w_up, seq, h, inter);
            let act: Vec<T> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
            let down = matmul(&act, &lp.w_down, seq, inter, h);
            x.iter_mut().zip(&down).for_each(|(a, &b)| *a += b);

            layers.push(LayerTape {
                x_in,
                attn_inv_rms,
                attn_in,
                q,
                k,
                v,
                probs,
                heads,
                x_mid,
                ffn_inv_rms,
                ffn_in,
                gate,
                up,
                act,
            });
        }

        let (normed, final_inv_rms) = rms_norm_rows(&x, &self.params.final_norm, seq, h, c.norm_eps);
        let logits = matmul_bt(&normed, &self.params.embedding, seq, h, c.vocab_size);
        let tape = ActivationTape { ids: ids.to_vec(), layers, x_final: x, final_inv_rms, normed, rope };
        Ok((logits, tape))
    }

    pub fn logits(&self, ids: &[u32]) -> Result<Vec<T>, ModelError> {
        Ok(self.forward(ids)?.0)
    }

    /// Exact gradients of every parameter given `d_logits` (same shape as
    /// the logits). The embedding gradient sums the lookup and output
    /// projection contributions.
    pub fn backward(&self, tape: &ActivationTape<T>, d_logits: &[T]) -> Parameters<T> {
        let c = &self.cfg;
        let (seq, h, kv, inter, vocab) = (tape.seq_len(), c.hidden, c.kv_dim(), c.intermediate, c.vocab_size);
        let (nh, nkv, hd) = (c.n_heads, c.kv_heads(), c.head_dim());
        let p = &self.params;
        let mut g = p.zeros_like();

        // logits = normed · Eᵀ
        matmul_at_acc(d_logits, &tape.normed, seq, vocab, h, &mut g.embedding);
        let d_normed = matmul(d_logits, &p.embedding, seq, vocab, h);
        let mut dx = rms_norm_rows_backward(
            &d_normed,
            &tape.x_final,
            &tape.final_inv_rms,
            &p.final_norm,
            seq,
            h,
            &mut g.final_norm,
        );

        for (li, (lp, lt)) in p.layers.iter().zip(&tape.layers).enumerate().rev() {
            let lg = &mut g.layers[li];

            // x_out = x_mid + act · W_down
            matmul_at_acc(&lt.act, &dx, seq, inter, h, &mut lg.w_down);
            let d_act = matmul_bt(&dx, &lp.w_down, seq, h, inter);
            let mut d_gate = vec![T::zero(); seq * inter];
            let mut d_up = vec![T::zero(); seq * inter];
            for i in 0..seq * inter {
                d_gate[i] = d_act[i] * lt.up[i] * silu_grad(lt.gate[i]);
                d_up[i] = d_act[i] * silu(lt.gate[i]);
            }
            matmul_at_acc(&lt.ffn_in, &d_gate, seq, h, inter, &mut lg.w_gate);
            matmul_at_acc(&lt.ffn_in, &d_up, seq, h, inter, &mut lg.w_up);
            let mut d_ffn_in = matmul_bt(&d_gate, &lp.w_gate, seq, inter, h);
            let d_from_up = matmul_bt(&d_up, &lp.w_up, seq, inter, h);
            d_ffn_in.iter_mut().zip(&d_from_up).for_each(|(a, &b)| *a += b);
            let d_mid =
                rms_norm_rows_backward(&d_ffn_in, &lt.x_mid, &lt.ffn_inv_rms, &lp.ffn_norm, seq, h, &mut lg.ffn_norm);
            dx.iter_mut().zip(&d_mid).for_each(|(a, &b)| *a += b);

            // x_mid = x_in + heads · W_o
            matmul_at_acc(&lt.heads, &dx, seq, h, h, &mut lg.wo);
            let d_heads = matmul_bt(&dx, &lp.wo, seq, h, h);
            let (mut dq, mut dk, dv) = attention_backward(&d_heads, &lt.q, &lt.k, &lt.v, &lt.probs, seq, nh, nkv, hd);
            tape.rope.apply(&mut dq, seq, nh, true);
            tape.rope.apply(&mut dk, seq, nkv, true);
            matmul_at_acc(&lt.attn_in, &dq, seq, h, h, &mut lg.wq);
            matmul_at_acc(&lt.attn_in, &dk, seq, h, kv, &mut lg.wk);
            matmul_at_acc(&lt.attn_in, &dv, seq, h, kv, &mut lg.wv);
            let mut d_attn_in = matmul_bt(&dq, &lp.wq, seq, h, h);
            for (d, w, width) in [(&dk, &lp.wk, kv), (&dv, &lp.wv, kv)] {
                let part = matmul_bt(d, w, seq, width, h);
                d_attn_in.iter_mut().zip(&part).for_each(|(a, &b)| *a += b);
            }
            let d_in = rms_norm_rows_backward(
                &d_attn_in,
                &lt.x_in,
                &lt.attn_inv_rms,
                &lp.attn_norm,
                seq,
                h,
                &mut lg.attn_norm,
            );
            dx.iter_mut().zip(&d_in).for_each(|(a, &b)| *a += b);
        }

        for (t, &id) in tape.ids.iter().enumerate() {
            let row = &mut g.embedding[id as usize * h..(id as usize + 1) * h];
            row.iter_mut().zip(&dx[t * h..(t + 1) * h]).for_each(|(a, &b)| *a += b);
        }
        g
    }

    /// Mean next-token loss of `ids[..n-1]` predicting `ids[1..]`.
    pub fn loss(&self, ids: &[u32]) -> Result<T, ModelError> {
        let (inputs, targets) = split_block(ids)?;
        let logits = self.logits(inputs)?;
        Ok(super::ops::cross_entropy(&logits, targets, self.cfg.vocab_size))
    }

    /// Loss and gradients of `loss_scale · loss` for one block.
    pub fn loss_and_grad(&self, ids: &[u32], loss_scale: T) -> Result<(T, Parameters<T>), ModelError> {
        let (inputs, targets) = split_block(ids)?;
        let (logits, tape) = self.forward(inputs)?;
        let (loss, d_logits) = cross_entropy_with_grad(&logits, targets, self.cfg.vocab_size, loss_scale);
        Ok((loss, self.backward(&tape, &d_logits)))
    }
}

/// A block of n ids gives n-1 inputs and their shifted targets.
fn split_block(ids: &[u32]) -> Result<(&[u32], &[u32]), ModelError> {
    if ids.len() < 2 {
        return Err(ModelError::EmptySequence);
    }
    Ok((&ids[..ids.len() - 1], &ids[1..]))
}
