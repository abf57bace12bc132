use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::ops::log_softmax_row;
use crate::model::{ModelError, Real, Transformer};
use crate::tokenizer::TokenizerModel;

/// Anything that maps a token sequence to next-token logits.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    /// `ids.len() × vocab_size` logits; row `i` predicts the token after `ids[i]`.
    fn logits(&self, ids: &[u32]) -> Result<Vec<f64>, EvalError>;
}

impl<T: Real> LanguageModel for Transformer<T> {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn context_len(&self) -> usize {
        self.cfg.context_len
    }

    fn logits(&self, ids: &[u32]) -> Result<Vec<f64>, EvalError> {
        Ok(Transformer::logits(self, ids)?.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    /// Sum of candidate token log-probabilities divided by their count.
    pub normalized: f64,
    pub log_likelihood: f64,
    pub n_tokens: usize,
}

/// Length-normalized log-likelihood of `candidate` following `prompt`.
///
/// The candidate's tokens are those of `encode(prompt + candidate)` past its
/// common prefix with `encode(prompt)`, so a merge across the boundary is
/// scored as part of the candidate. When nothing precedes them (empty
/// prompt), end-of-text is prepended as the conditioning token.
pub fn score_candidate<M: LanguageModel + ?Sized>(
    model: &M,
    tokenizer: &TokenizerModel,
    prompt: &str,
    candidate: &str,
) -> Result<CandidateScore, EvalError> {
    if candidate.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    let p = tokenizer.encode(prompt);
    let mut full = tokenizer.encode(&format!("{prompt}{candidate}"));
    let mut start = p.iter().zip(&full).take_while(|(a, b)| a == b).count();
    if start == full.len() {
        return Err(EvalError::EmptyCandidate);
    }
    if start == 0 {
        full.insert(0, tokenizer.eot_id().ok_or(EvalError::NoEndOfText)?);
        start = 1;
    }
    if full.len() > model.context_len() {
        return Err(EvalError::ContextOverflow { len: full.len(), context_len: model.context_len() });
    }
    let v = model.vocab_size();
    if let Some(&id) = full.iter().find(|&&id| id as usize >= v) {
        return Err(ModelError::TokenOutOfRange { id, vocab_size: v }.into());
    }
    let logits = model.logits(&full[..full.len() - 1])?;
    let mut total = 0.0;
    for j in start..full.len() {
        let row = &logits[(j - 1) * v..j * v];
        total += log_softmax_row(row)[full[j] as usize];
    }
    let n = full.len() - start;
    Ok(CandidateScore { normalized: total / n as f64, log_likelihood: total, n_tokens: n })
}
