//! Loss of a logit-averaged ensemble, and the logit tensor file format.
//!
//! File layout, little-endian: magic `MGLT`, `u32` version, `u32` dtype
//! (0 = f32), `u64` tokens, `u64` vocab, then `tokens * vocab` f32 values,
//! row-major.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::arena::write_atomic;

pub const LOGIT_MAGIC: &[u8; 4] = b"MGLT";
pub const LOGIT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no models")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target {target} at position {pos} is outside vocab {vocab}")]
    Target { pos: usize, target: u32, vocab: usize },
    #[error("logit file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor {
    pub tokens: usize,
    pub vocab: usize,
    pub data: Vec<f32>,
}

impl LogitTensor {
    pub fn new(tokens: usize, vocab: usize, data: Vec<f32>) -> Result<Self, EnsembleError> {
        if data.len() != tokens * vocab {
            return Err(EnsembleError::Shape(format!(
                "{} values for {tokens}x{vocab}",
                data.len()
            )));
        }
        Ok(Self { tokens, vocab, data })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(LOGIT_MAGIC);
        out.extend_from_slice(&LOGIT_VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&(self.tokens as u64).to_le_bytes());
        out.extend_from_slice(&(self.vocab as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnsembleError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != LOGIT_MAGIC {
            return Err(EnsembleError::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != LOGIT_VERSION {
            return Err(EnsembleError::Format(format!("unsupported version {}", u32_at(4))));
        }
        if u32_at(8) != DTYPE_F32 {
            return Err(EnsembleError::Format(format!("unsupported dtype {}", u32_at(8))));
        }
        let (tokens, vocab) = (u64_at(12) as usize, u64_at(20) as usize);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * tokens * vocab {
            return Err(EnsembleError::Format(format!(
                "payload is {} bytes, header says {tokens}x{vocab}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { tokens, vocab, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), EnsembleError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EnsembleError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Mean NLL of `targets` under the average of the models' logits.
pub fn ensemble_loss(models: &[LogitTensor], targets: &[u32]) -> Result<f64, EnsembleError> {
    let first = models.first().ok_or(EnsembleError::Empty)?;
    let (tokens, vocab) = (first.tokens, first.vocab);
    if let Some(m) = models.iter().find(|m| m.tokens != tokens || m.vocab != vocab) {
        return Err(EnsembleError::Shape(format!(
            "{}x{} vs {tokens}x{vocab}",
            m.tokens, m.vocab
        )));
    }
    if targets.len() != tokens {
        return Err(EnsembleError::Shape(format!(
            "{} targets for {tokens} positions",
            targets.len()
        )));
    }
    if tokens == 0 {
        return Err(EnsembleError::Shape("no positions".into()));
    }
    let k = models.len() as f64;
    let mut avg = vec![0.0f64; vocab];
    let mut total = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        if target as usize >= vocab {
            return Err(EnsembleError::Target { pos: t, target, vocab });
        }
        avg.fill(0.0);
        for m in models {
            for (a, &z) in avg.iter_mut().zip(m.row(t)) {
                *a += z as f64;
            }
        }
        avg.iter_mut().for_each(|a| *a /= k);
        let max = avg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + avg.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
        total += lse - avg[target as usize];
    }
    Ok(total / tokens as f64)
}
