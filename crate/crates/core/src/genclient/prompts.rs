//! Verbatim generator prompts and their rendering.
//!
//! Templates are filled by splitting on the placeholder once, so braces or
//! placeholder-looking text inside a document are copied through literally.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;
use crate::tokenizer::{Tokenize, TokenizerError};

pub const SYSTEM_PROMPT: &str =
    "Provide a direct response to the instructions without adding additional notes.";

pub const REPHRASE_PREFIX: &str = "For the following document, regardless of its original content or formatting, write a full article of the same content in high quality English language as in texts on Wikipedia:\n\nDocument:\n";
pub const REPHRASE_SUFFIX: &str = "\n\nRephrased article:";

pub const LATENT_PREFIX: &str = "You are provided with a pair of web document prefix and suffix. Your task is to insert latent thoughts between them underlying the creation of the suffix conditioned on the prefix. The latent thoughts should include any missing background knowledge and any reasoning traces underlying each claim (especially, step-by-step derivations or logical reasoning).\n\nPrefix: ";
pub const LATENT_MIDDLE: &str = "\n\nSuffix: ";
pub const LATENT_SUFFIX: &str = "\n\nNow provide the latent thoughts. Use concise, simple, and declarative language. Do not give any supporting remarks or references to the terms 'prefix' and 'suffix', as this output will go directly into a computer program. Do not apply any markdown formatting or text embellishments. Optimize the content to ensure every word is informative, avoid vague language like 'xxx is essential'. Emphasize on the suffix without repeating the content in the prefix. Focus on implicit reasoning and background knowledge that is not explicitly stated in the suffix, and use concrete logical reasoning or mathematical derivations when applicable.";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("document {doc_id}: cut {cut} must lie strictly inside (0, {token_len})")]
    CutOutOfRange {
        doc_id: String,
        cut: usize,
        token_len: usize,
    },
    #[error("document {doc_id}: cannot decode tokens around cut {cut}: {source}")]
    Decode {
        doc_id: String,
        cut: usize,
        source: TokenizerError,
    },
    #[error("document {doc_id}: {token_len} tokens cannot be split into {pieces} pieces")]
    TooShort {
        doc_id: String,
        token_len: usize,
        pieces: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

pub fn render_rephrase_prompt(doc: &Document) -> RenderedPrompt {
    RenderedPrompt {
        system: SYSTEM_PROMPT.to_string(),
        user: format!("{REPHRASE_PREFIX}{}{REPHRASE_SUFFIX}", doc.text),
    }
}

/// Inverse of [`render_rephrase_prompt`]: recovers the document text.
pub fn extract_rephrase_document(user: &str) -> Option<&str> {
    user.strip_prefix(REPHRASE_PREFIX)?
        .strip_suffix(REPHRASE_SUFFIX)
}

/// Recovers `(prefix, suffix)` from a rendered latent-thought prompt. Ambiguous
/// if the prefix itself contains the `"\n\nSuffix: "` marker; the first
/// occurrence wins.
pub fn extract_latent_parts(user: &str) -> Option<(&str, &str)> {
    let body = user.strip_prefix(LATENT_PREFIX)?.strip_suffix(LATENT_SUFFIX)?;
    body.split_once(LATENT_MIDDLE)
}

/// `G` cut offsets splitting `token_len` tokens into `G + 1` near-equal pieces:
/// cut `i` (1-based) sits at `floor(i * token_len / (G + 1))`.
pub fn split_points(token_len: usize, generations: usize) -> Option<Vec<usize>> {
    let pieces = generations + 1;
    if token_len < pieces {
        return None;
    }
    Some(
        (1..=generations)
            .map(|i| ((i as u128 * token_len as u128) / pieces as u128) as usize)
            .collect(),
    )
}

pub fn split_points_for(doc: &Document, generations: usize) -> Result<Vec<usize>, PromptError> {
    split_points(doc.token_len(), generations).ok_or_else(|| PromptError::TooShort {
        doc_id: doc.doc_id.clone(),
        token_len: doc.token_len(),
        pieces: generations + 1,
    })
}

pub fn render_latent_prompt(
    doc: &Document,
    cut: usize,
    tokenizer: &dyn Tokenize,
) -> Result<RenderedPrompt, PromptError> {
    if cut == 0 || cut >= doc.token_len() {
        return Err(PromptError::CutOutOfRange {
            doc_id: doc.doc_id.clone(),
            cut,
            token_len: doc.token_len(),
        });
    }
    let decode = |toks| {
        tokenizer.decode(toks).map_err(|source| PromptError::Decode {
            doc_id: doc.doc_id.clone(),
            cut,
            source,
        })
    };
    let prefix = decode(&doc.tokens[..cut])?;
    let suffix = decode(&doc.tokens[cut..])?;
    Ok(RenderedPrompt {
        system: SYSTEM_PROMPT.to_string(),
        user: format!("{LATENT_PREFIX}{prefix}{LATENT_MIDDLE}{suffix}{LATENT_SUFFIX}"),
    })
}

/// Hash of every template constant; recorded in pool manifests so a pool is
/// never extended under different prompts.
pub fn prompts_hash() -> String {
    let mut h = Sha256::new();
    for part in [
        SYSTEM_PROMPT,
        REPHRASE_PREFIX,
        REPHRASE_SUFFIX,
        LATENT_PREFIX,
        LATENT_MIDDLE,
        LATENT_SUFFIX,
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}
