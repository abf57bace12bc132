use std::io::{Cursor, Read};
use std::path::Path;

use rayon::prelude::*;

use super::{TokenizerError, TokenizerModel};
use crate::io::{read_magic, read_u32, read_u64, write_atomic};

pub const BLOCK_MAGIC: &[u8; 4] = b"BLKS";
pub const BLOCK_VERSION: u32 = 1;

/// Fixed-length training blocks of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockFile {
    pub block_len: usize,
    pub vocab_size: usize,
    /// `block_count * block_len` ids, row-major.
    pub ids: Vec<u32>,
}

impl BlockFile {
    pub fn block_count(&self) -> usize {
        self.ids.len() / self.block_len
    }

    pub fn block(&self, i: usize) -> &[u32] {
        &self.ids[i * self.block_len..(i + 1) * self.block_len]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[u32]> {
        self.ids.chunks_exact(self.block_len)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.ids.len() * 4);
        out.extend_from_slice(BLOCK_MAGIC);
        out.extend_from_slice(&BLOCK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.block_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.block_count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let bad = |m: String| TokenizerError::InvalidBlocks(m);
        let mut r = Cursor::new(bytes);
        read_magic(&mut r, BLOCK_MAGIC).map_err(|e| bad(e.to_string()))?;
        let version = read_u32(&mut r)?;
        if version != BLOCK_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let block_len = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let vocab_size = read_u32(&mut r)? as usize;
        if block_len < 2 {
            return Err(bad(format!("block_len {block_len}")));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * block_len * 4 {
            return Err(bad(format!("expected {count} blocks of {block_len} ids, body is {} bytes", body.len())));
        }
        let ids: Vec<u32> = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(bad(format!("id {id} outside vocab of {vocab_size}")));
        }
        Ok(Self { block_len, vocab_size, ids })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, |w| w.write_all(&self.to_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Encodes every document, appends end-of-text after each, concatenates and
/// slices into blocks of exactly `block_len` ids. The trailing partial block is
/// dropped. Documents are encoded in parallel; the output does not depend on
/// the thread count.
pub fn pretokenize_corpus<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    docs: &[S],
    block_len: usize,
) -> Result<BlockFile, TokenizerError> {
    if block_len < 2 {
        return Err(TokenizerError::BlockLen(block_len));
    }
    let eot = model.eot_id().ok_or(TokenizerError::NoEndOfText)?;
    let encoded: Vec<Vec<u32>> = docs.par_iter().map(|d| model.encode(d.as_ref())).collect();
    let mut ids: Vec<u32> = Vec::with_capacity(encoded.iter().map(|e| e.len() + 1).sum());
    for e in encoded {
        ids.extend_from_slice(&e);
        ids.push(eot);
    }
    ids.truncate(ids.len() / block_len * block_len);
    Ok(BlockFile { block_len, vocab_size: model.vocab_size(), ids })
}
