//! Token-weighted validation loss over a document split.
//!
//! Inputs are a raw little-endian f32 file of per-token NLLs and a JSONL file
//! of `{doc_id, start, end}` spans into it.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ValidationSplit;

#[derive(Debug, Error)]
pub enum SplitLossError {
    #[error("document {0} of the split has no boundaries")]
    MissingDoc(String),
    #[error("boundaries cover {covered} tokens but the NLL file has {tokens}")]
    TokenMismatch { covered: usize, tokens: usize },
    #[error("bad span for {doc_id}: [{start}, {end})")]
    BadSpan { doc_id: String, start: usize, end: usize },
    #[error("NLL file length {0} is not a multiple of 4")]
    Format(usize),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("boundary line: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLoss {
    pub split_id: String,
    pub docs: usize,
    pub tokens: usize,
    pub mean_nll: f64,
}

pub fn split_loss(nll: &[f32], boundaries: &[DocSpan], split: &ValidationSplit) -> Result<SplitLoss, SplitLossError> {
    let mut covered = 0;
    for b in boundaries {
        if b.start > b.end || b.end > nll.len() {
            return Err(SplitLossError::BadSpan {
                doc_id: b.doc_id.clone(),
                start: b.start,
                end: b.end,
            });
        }
        covered += b.end - b.start;
    }
    if covered != nll.len() {
        return Err(SplitLossError::TokenMismatch {
            covered,
            tokens: nll.len(),
        });
    }
    let by_id: HashMap<&str, &DocSpan> = boundaries.iter().map(|b| (b.doc_id.as_str(), b)).collect();
    let mut sum = 0.0f64;
    let mut tokens = 0;
    for id in &split.doc_ids {
        let b = by_id.get(id.as_str()).ok_or_else(|| SplitLossError::MissingDoc(id.clone()))?;
        sum += nll[b.start..b.end].iter().map(|&v| v as f64).sum::<f64>();
        tokens += b.end - b.start;
    }
    Ok(SplitLoss {
        split_id: split.split_id.clone(),
        docs: split.doc_ids.len(),
        tokens,
        mean_nll: if tokens == 0 { f64::NAN } else { sum / tokens as f64 },
    })
}

pub fn read_nll(path: &Path) -> Result<Vec<f32>, SplitLossError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(SplitLossError::Format(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_boundaries(path: &Path) -> Result<Vec<DocSpan>, SplitLossError> {
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<f32>, Vec<DocSpan>) {
        let mut nll = vec![1.0f32; 10];
        nll.extend(vec![2.0f32; 30]);
        let b = vec![
            DocSpan { doc_id: "doc1".into(), start: 0, end: 10 },
            DocSpan { doc_id: "doc2".into(), start: 10, end: 40 },
        ];
        (nll, b)
    }

    #[test]
    fn weighted_means() {
        let (nll, b) = fixture();
        let one = ValidationSplit::external("only2", vec!["doc2".into()]);
        assert_eq!(split_loss(&nll, &b, &one).unwrap().mean_nll, 2.0);
        let both = ValidationSplit::external("all", vec!["doc1".into(), "doc2".into()]);
        assert_eq!(split_loss(&nll, &b, &both).unwrap().mean_nll, 1.75);
    }

    #[test]
    fn constant_nll() {
        let b = vec![
            DocSpan { doc_id: "a".into(), start: 0, end: 3 },
            DocSpan { doc_id: "b".into(), start: 3, end: 8 },
        ];
        let s = ValidationSplit::external("s", vec!["b".into()]);
        assert!((split_loss(&[0.7; 8], &b, &s).unwrap().mean_nll - 0.7f32 as f64).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let (nll, b) = fixture();
        let missing = ValidationSplit::external("m", vec!["doc9".into()]);
        assert!(matches!(split_loss(&nll, &b, &missing), Err(SplitLossError::MissingDoc(_))));
        let s = ValidationSplit::external("s", vec!["doc1".into()]);
        assert!(matches!(split_loss(&nll[..39], &b, &s), Err(SplitLossError::BadSpan { .. })));
        assert!(matches!(split_loss(&[nll.clone(), vec![0.0]].concat(), &b, &s), Err(SplitLossError::TokenMismatch { .. })));
    }
}
