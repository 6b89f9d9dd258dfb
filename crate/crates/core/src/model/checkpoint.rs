//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "EARCKPT\0"
//! version    u32
//! header_len u64
//! header     JSON: { config, vocab_hash, tensors: [{name, rows, cols}] }
//! payload    f64 values of every tensor, row-major, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams};
use crate::error::{EarError, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EARCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Content hash of the vocabulary the model was trained with.
    pub vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(model: Model, vocab_hash: impl Into<String>) -> Self {
        Self {
            model,
            vocab_hash: vocab_hash.into(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let names = ModelParams::<Matrix>::names(c.layers, c.heads);
        let tensors = self.model.params.flatten();
        let header = Header {
            config: c.clone(),
            vocab_hash: self.vocab_hash.clone(),
            tensors: names
                .into_iter()
                .zip(&tensors)
                .map(|(name, m)| TensorEntry {
                    name,
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.model.params.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for m in tensors {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| EarError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(EarError::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| EarError::Checkpoint(format!("header: {e}")))?;
        let c = &header.config;
        c.validate()?;
        let names = ModelParams::<Matrix>::names(c.layers, c.heads);
        if names.len() != header.tensors.len()
            || names.iter().zip(&header.tensors).any(|(n, t)| *n != t.name)
        {
            return Err(bad("tensor names do not match the model layout"));
        }
        let mut offset = header_end;
        let mut items = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n = t.rows * t.cols;
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(EarError::Checkpoint(format!("truncated tensor {}", t.name)));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            items.push(Matrix::from_vec(t.rows, t.cols, data)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        let params = ModelParams::from_flat(c.layers, c.heads, items);
        let model = Model::new(header.config, params)?;
        Ok(Self {
            model,
            vocab_hash: header.vocab_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EarError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
