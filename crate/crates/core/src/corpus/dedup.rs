use std::collections::HashSet;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use md5::{Digest as _, Md5};

use super::CorpusError;
use crate::io::{read_magic, read_u64, write_atomic};

pub type Digest = [u8; 16];

/// Magic bytes opening a binary reference hash file.
pub const HASHSET_MAGIC: &[u8; 4] = b"MD5S";

/// MD5 of the UTF-8 bytes of `text`.
pub fn md5_digest(text: &str) -> Digest {
    Md5::digest(text.as_bytes()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigestOrigin {
    WithinRun,
    ExternalReference,
}

#[derive(Debug, Clone)]
pub struct DigestSet {
    digests: HashSet<Digest>,
    origin: DigestOrigin,
}

impl DigestSet {
    pub fn new(origin: DigestOrigin) -> Self {
        Self { digests: HashSet::new(), origin }
    }

    pub fn origin(&self) -> DigestOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.digests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digests.is_empty()
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.digests.contains(d)
    }

    /// Returns false when the digest was already present.
    pub fn insert(&mut self, d: Digest) -> bool {
        self.digests.insert(d)
    }

    /// Loads a reference set. Binary files start with [`HASHSET_MAGIC`] and a
    /// little-endian `u64` count followed by raw 16-byte digests; anything
    /// else is read as one hex digest per line.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let err = |reason: String| CorpusError::Reference { path: path.display().to_string(), reason };
        let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
        let mut set = DigestSet::new(DigestOrigin::ExternalReference);
        if bytes.starts_with(HASHSET_MAGIC) {
            let mut cur = Cursor::new(&bytes[..]);
            read_magic(&mut cur, HASHSET_MAGIC).map_err(|e| err(e.to_string()))?;
            let count = read_u64(&mut cur).map_err(|e| err(e.to_string()))? as usize;
            let body = &bytes[12..];
            if body.len() != count.saturating_mul(16) {
                return Err(err(format!("header says {count} digests but body holds {} bytes", body.len())));
            }
            for chunk in body.chunks_exact(16) {
                set.insert(chunk.try_into().expect("16-byte chunk"));
            }
        } else {
            let text = std::str::from_utf8(&bytes).map_err(|e| err(e.to_string()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let mut d = [0u8; 16];
                hex::decode_to_slice(line, &mut d).map_err(|e| err(format!("line {}: {e}", lineno + 1)))?;
                set.insert(d);
            }
        }
        Ok(set)
    }

    /// Writes the binary format with digests in sorted order.
    pub fn save_binary(&self, path: &Path) -> std::io::Result<()> {
        let mut sorted: Vec<&Digest> = self.digests.iter().collect();
        sorted.sort();
        write_atomic(path, |w| {
            w.write_all(HASHSET_MAGIC)?;
            w.write_all(&(sorted.len() as u64).to_le_bytes())?;
            for d in &sorted {
                w.write_all(&d[..])?;
            }
            Ok(())
        })
    }

    pub fn save_hex(&self, path: &Path) -> std::io::Result<()> {
        let mut sorted: Vec<&Digest> = self.digests.iter().collect();
        sorted.sort();
        write_atomic(path, |w| {
            for d in &sorted {
                writeln!(w, "{}", hex::encode(d))?;
            }
            Ok(())
        })
    }
}

impl FromIterator<Digest> for DigestSet {
    fn from_iter<I: IntoIterator<Item = Digest>>(iter: I) -> Self {
        let mut set = DigestSet::new(DigestOrigin::ExternalReference);
        for d in iter {
            set.insert(d);
        }
        set
    }
}

/// Exact deduplication against earlier documents of this run and an
/// external reference set. The first occurrence wins.
#[derive(Debug)]
pub struct Deduplicator<'a> {
    seen: DigestSet,
    reference: &'a DigestSet,
}

impl<'a> Deduplicator<'a> {
    pub fn new(reference: &'a DigestSet) -> Self {
        Self { seen: DigestSet::new(DigestOrigin::WithinRun), reference }
    }

    /// Returns true when `text` has not been seen before and is not in the
    /// reference set. Admitted texts are remembered.
    pub fn admit(&mut self, text: &str) -> bool {
        let d = md5_digest(text);
        !self.reference.contains(&d) && self.seen.insert(d)
    }

    pub fn seen(&self) -> &DigestSet {
        &self.seen
    }

    pub fn into_seen(self) -> DigestSet {
        self.seen
    }
}
