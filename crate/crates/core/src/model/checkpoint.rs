use std::io::{Cursor, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, Parameters, Real, Transformer};
use crate::io::{read_f64, read_magic, read_u32, read_u64, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TKCP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Writes `count`, then per tensor: name length, name, rank, dims, f32 data.
pub fn write_tensors(w: &mut dyn Write, tensors: &[NamedTensor]) -> std::io::Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(r: &mut impl Read) -> Result<Vec<NamedTensor>, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(bad(format!("tensor name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(bad(format!("tensor {name} has rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<_, _>>()?;
        let len: usize = dims.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

/// Model weights plus the config that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(m: &Transformer<T>) -> Self {
        Self { config: m.cfg.clone(), params: m.params.cast() }
    }

    pub fn into_model(self) -> Result<Transformer<f32>, ModelError> {
        Transformer::new(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.vocab_size, c.n_layers, c.hidden, c.n_heads, c.kv_heads(), c.intermediate, c.context_len] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.rope_base.to_le_bytes());
        out.extend_from_slice(&c.norm_eps.to_le_bytes());
        let tensors: Vec<NamedTensor> = Parameters::<f32>::specs(c)
            .into_iter()
            .zip(self.params.tensors())
            .map(|(s, data)| NamedTensor { name: s.name, dims: s.dims, data: data.clone() })
            .collect();
        write_tensors(&mut out, &tensors).expect("writing to a Vec");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let mut r = Cursor::new(bytes);
        read_magic(&mut r, CHECKPOINT_MAGIC).map_err(|e| bad(e.to_string()))?;
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let [vocab_size, n_layers, hidden, n_heads, n_kv, intermediate, context_len] = dims;
        let config = ModelConfig {
            vocab_size,
            n_layers,
            hidden,
            n_heads,
            n_kv_heads: if n_kv == n_heads { None } else { Some(n_kv) },
            intermediate,
            context_len,
            rope_base: read_f64(&mut r)?,
            norm_eps: read_f64(&mut r)?,
        };
        config.validate()?;
        let tensors = read_tensors(&mut r)?;
        let specs = Parameters::<f32>::specs(&config);
        if tensors.len() != specs.len() {
            return Err(bad(format!("expected {} tensors, found {}", specs.len(), tensors.len())));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.name != t.name || s.dims != t.dims {
                return Err(bad(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.dims, s.name, s.dims
                )));
            }
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after last tensor".into()));
        }
        let params = Parameters::from_tensors(&config, tensors.into_iter().map(|t| t.data).collect())
            .ok_or_else(|| bad("tensor sizes".into()))?;
        if !params.is_finite() {
            return Err(bad("non-finite weights".into()));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, |w| w.write_all(&self.to_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            n_layers: 1,
            hidden: 8,
            n_heads: 2,
            n_kv_heads: Some(1),
            intermediate: 12,
            context_len: 16,
            rope_base: 500.0,
            norm_eps: 1e-6,
        }
    }

    #[test]
    fn round_trip_preserves_config_and_weights() {
        let m = Transformer::<f32>::init(cfg(), 4).unwrap();
        let ck = Checkpoint::from_model(&m);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let m2 = back.into_model().unwrap();
        assert_eq!(m2.logits(&[1, 2, 3]).unwrap(), m.logits(&[1, 2, 3]).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = Checkpoint::from_model(&Transformer::<f32>::init(cfg(), 4).unwrap()).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(Checkpoint::from_bytes(&nan).is_err());
    }
}
