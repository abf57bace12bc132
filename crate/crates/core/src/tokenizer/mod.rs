//! Byte-level BPE: training, encoding, decoding, fertility and block packing.

mod blocks;
mod bytemap;
mod fertility;
mod pretok;
mod train;

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blocks::{pretokenize_corpus, BlockFile, BLOCK_MAGIC, BLOCK_VERSION};
pub use bytemap::ByteMap;
pub use fertility::{fertility, FertilityReport};
pub use pretok::pretokenize;
pub use train::train_bpe;

/// Default end-of-text token.
pub const END_OF_TEXT: &str = "<|endoftext|>";
/// 256 byte symbols, 50,000 merges and one special token.
pub const DEFAULT_VOCAB_SIZE: usize = 50_257;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab_size {vocab_size} is below the {minimum} base and special tokens")]
    VocabTooSmall { vocab_size: usize, minimum: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("text has no whitespace-separated words")]
    NoWords,
    #[error("tokenizer has no end-of-text token")]
    NoEndOfText,
    #[error("block_len must be at least 2, got {0}")]
    BlockLen(usize),
    #[error("invalid tokenizer model: {0}")]
    InvalidModel(String),
    #[error("invalid block file: {0}")]
    InvalidBlocks(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Result of decoding; `replaced` is set when the bytes were not valid UTF-8
/// and U+FFFD substitutions were made. That can only happen for id sequences
/// that `encode` never produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    pub replaced: bool,
}

/// A trained byte-level BPE tokenizer. Immutable once built.
#[derive(Debug, Clone)]
pub struct TokenizerModel {
    bytes: ByteMap,
    /// id -> token string (byte-mapped spelling, or the literal special).
    tokens: Vec<String>,
    vocab: HashMap<String, u32>,
    /// Merge list in rank order, as token ids.
    merges: Vec<(u32, u32)>,
    /// (left, right) -> (rank, merged id).
    merge_lookup: HashMap<(u32, u32), (u32, u32)>,
    byte_ids: [u32; 256],
    specials: Vec<String>,
    special_ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    vocab: IndexMap<String, u32>,
    merges: Vec<String>,
    specials: Vec<String>,
}

impl TokenizerModel {
    /// Builds a model whose ids are bytes `0..256`, then one id per merge in
    /// rank order, then the specials.
    pub fn from_merges(merges: &[(String, String)], specials: &[String]) -> Result<Self, TokenizerError> {
        let bytes = ByteMap::new();
        let mut vocab: IndexMap<String, u32> = IndexMap::new();
        for b in 0..=255u8 {
            vocab.insert(bytes.to_char(b).to_string(), b as u32);
        }
        for (l, r) in merges {
            let id = vocab.len() as u32;
            vocab.insert(format!("{l}{r}"), id);
        }
        for s in specials {
            let id = vocab.len() as u32;
            vocab.insert(s.clone(), id);
        }
        let merge_strs: Vec<String> = merges.iter().map(|(l, r)| format!("{l} {r}")).collect();
        Self::from_file_parts(ModelFile { vocab, merges: merge_strs, specials: specials.to_vec() })
    }

    fn from_file_parts(file: ModelFile) -> Result<Self, TokenizerError> {
        let bad = |m: String| TokenizerError::InvalidModel(m);
        let ModelFile { vocab: vocab_map, merges: merge_strs, specials } = file;
        let n = vocab_map.len();
        if n != 256 + merge_strs.len() + specials.len() {
            return Err(bad(format!(
                "vocab has {n} entries, expected 256 + {} merges + {} specials",
                merge_strs.len(),
                specials.len()
            )));
        }
        let mut tokens = vec![None; n];
        for (tok, &id) in &vocab_map {
            let slot = tokens.get_mut(id as usize).ok_or_else(|| bad(format!("id {id} out of range")))?;
            if slot.is_some() {
                return Err(bad(format!("id {id} assigned twice")));
            }
            *slot = Some(tok.clone());
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("ids are a permutation")).collect();
        let vocab: HashMap<String, u32> = vocab_map.into_iter().collect();

        let bytes = ByteMap::new();
        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            byte_ids[b as usize] = *vocab
                .get(&bytes.to_char(b).to_string())
                .ok_or_else(|| bad(format!("missing base symbol for byte {b}")))?;
        }
        let mut special_ids = Vec::with_capacity(specials.len());
        for s in &specials {
            special_ids.push(*vocab.get(s).ok_or_else(|| bad(format!("special {s:?} not in vocab")))?);
        }

        // Operands must already exist: a base symbol or an earlier product.
        let mut available: std::collections::HashSet<u32> = byte_ids.iter().copied().collect();
        let mut merges = Vec::with_capacity(merge_strs.len());
        let mut merge_lookup = HashMap::with_capacity(merge_strs.len());
        for (rank, m) in merge_strs.iter().enumerate() {
            let (l, r) = m.split_once(' ').ok_or_else(|| bad(format!("merge {m:?} is not \"left right\"")))?;
            let id_of = |t: &str| vocab.get(t).copied().ok_or_else(|| bad(format!("merge operand {t:?} not in vocab")));
            let (li, ri) = (id_of(l)?, id_of(r)?);
            if !available.contains(&li) || !available.contains(&ri) {
                return Err(bad(format!("merge {rank} ({m:?}) uses a token not produced earlier")));
            }
            let out = id_of(&format!("{l}{r}"))?;
            if merge_lookup.insert((li, ri), (rank as u32, out)).is_some() {
                return Err(bad(format!("merge {m:?} listed twice")));
            }
            available.insert(out);
            merges.push((li, ri));
        }
        Ok(Self { bytes, tokens, vocab, merges, merge_lookup, byte_ids, specials, special_ids })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    /// Merge list in rank order as token strings.
    pub fn merges(&self) -> Vec<(String, String)> {
        self.merges.iter().map(|&(l, r)| (self.tokens[l as usize].clone(), self.tokens[r as usize].clone())).collect()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn byte_map(&self) -> &ByteMap {
        &self.bytes
    }

    /// Id of the end-of-text token: the default one if present, otherwise the
    /// first special.
    pub fn eot_id(&self) -> Option<u32> {
        self.specials
            .iter()
            .position(|s| s == END_OF_TEXT)
            .or(if self.specials.is_empty() { None } else { Some(0) })
            .map(|i| self.special_ids[i])
    }

    /// Encodes one pre-token by repeatedly applying the lowest-rank merge.
    fn encode_piece(&self, piece: &str, out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = piece.bytes().map(|b| self.byte_ids[b as usize]).collect();
        while ids.len() >= 2 {
            let best = ids
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merge_lookup.get(&(w[0], w[1])).map(|&(rank, id)| (rank, i, id)))
                .min();
            let Some((_, i, id)) = best else { break };
            ids[i] = id;
            ids.remove(i + 1);
        }
        out.extend_from_slice(&ids);
    }

    /// Encodes raw text. Special-token spellings in `text` are encoded as
    /// ordinary bytes, never as special ids.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        for piece in pretokenize(text) {
            self.encode_piece(piece, &mut out);
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::UnknownId(id))?;
            if self.special_ids.contains(&id) {
                out.extend_from_slice(tok.as_bytes());
            } else {
                out.extend(tok.chars().map(|c| self.bytes.to_byte(c).expect("vocab token in byte alphabet")));
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Decoded, TokenizerError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(text) => Decoded { text, replaced: false },
            Err(e) => Decoded { text: String::from_utf8_lossy(e.as_bytes()).into_owned(), replaced: true },
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            vocab: self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect(),
            merges: self
                .merges
                .iter()
                .map(|&(l, r)| format!("{} {}", self.tokens[l as usize], self.tokens[r as usize]))
                .collect(),
            specials: self.specials.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TokenizerError> {
        Self::from_file_parts(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        crate::io::write_atomic_bytes(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
