//! Synthetic-stream documents assembled from a generation pool.
//!
//! Three families:
//!
//! - **simple**: every rephrase is its own unit, optionally alongside the real
//!   document.
//! - **stitched**: the `G` rephrases of one document, in generation order,
//!   concatenated with the real document first, last, or absent.
//! - **latent**: the real document cut at `G` split points with one wrapped
//!   rationale inserted at each cut. Removing the thought and wrapper segments
//!   gives back the original tokens.
//!
//! Segment tokens never include EOS. Separators are the packer's business and
//! are described by [`SeparatorPolicy`].

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{self, ArenaError};
use crate::corpus::{Corpus, Document};
use crate::genclient::pool::{GenerationKey, GenerationKind, GenerationPool, TokenStats};
use crate::genclient::prompts::split_points;
use crate::tokenizer::{TokenId, TokenizerSpec};

pub const MEGADOC_BIN: &str = "megadocs.bin";
pub const MEGADOC_INDEX: &str = "megadocs.index.json";
pub const MEGADOC_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MegadocError {
    #[error("algorithm {algorithm} needs a {expected:?} pool, got {found:?}")]
    WrongKind {
        algorithm: Algorithm,
        expected: GenerationKind,
        found: GenerationKind,
    },
    #[error("pool is missing {} generation(s), first: {:?}", .0.len(), .0.first())]
    Missing(Vec<GenerationKey>),
    #[error("pool and corpus disagree: {0}")]
    Mismatch(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error("megadoc index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Rephrase,
    Thought,
    Wrapper,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub provenance: Provenance,
    pub doc_id: String,
    pub gen_index: Option<u32>,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Simple,
    StitchRealFirst,
    StitchRealLast,
    StitchNoReal,
    Latent,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Simple,
        Algorithm::StitchRealFirst,
        Algorithm::StitchRealLast,
        Algorithm::StitchNoReal,
        Algorithm::Latent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::StitchRealFirst => "stitch_real_first",
            Self::StitchRealLast => "stitch_real_last",
            Self::StitchNoReal => "stitch_no_real",
            Self::Latent => "latent",
        }
    }

    pub fn is_stitched(self) -> bool {
        matches!(
            self,
            Self::StitchRealFirst | Self::StitchRealLast | Self::StitchNoReal
        )
    }

    pub fn pool_kind(self) -> GenerationKind {
        match self {
            Self::Latent => GenerationKind::LatentThought,
            _ => GenerationKind::Rephrase,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = MegadocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| MegadocError::UnknownAlgorithm(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealPosition {
    First,
    Last,
    None,
}

/// EOS placement inside stitched megadocs. The packer always appends one EOS
/// after every unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparatorPolicy {
    /// One EOS between consecutive stitched segments, plus the trailing one.
    #[default]
    BetweenAndAfter,
    /// Only the trailing EOS.
    AfterOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completeness {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Megadoc {
    pub megadoc_id: String,
    pub algorithm: Algorithm,
    pub segments: Vec<Segment>,
}

impl Megadoc {
    pub fn total_tokens(&self) -> usize {
        self.segments.iter().map(|s| s.tokens.len()).sum()
    }

    /// Internal separators this megadoc receives under `policy`.
    pub fn separator_count(&self, policy: SeparatorPolicy) -> usize {
        if self.algorithm.is_stitched() && policy == SeparatorPolicy::BetweenAndAfter {
            self.segments.len().saturating_sub(1)
        } else {
            0
        }
    }

    /// Token sequence as it enters the stream, excluding the trailing EOS.
    pub fn unit_tokens(&self, eos: TokenId, policy: SeparatorPolicy) -> Vec<TokenId> {
        let between = self.separator_count(policy) > 0;
        let mut out = Vec::with_capacity(self.total_tokens() + self.segments.len());
        for (i, s) in self.segments.iter().enumerate() {
            if between && i > 0 {
                out.push(eos);
            }
            out.extend_from_slice(&s.tokens);
        }
        out
    }

    pub fn provenance_sequence(&self) -> Vec<Provenance> {
        self.segments.iter().map(|s| s.provenance).collect()
    }
}

/// Removes thought and wrapper segments, leaving the real document's tokens.
pub fn strip_thoughts(megadoc: &Megadoc) -> Vec<TokenId> {
    megadoc
        .segments
        .iter()
        .filter(|s| s.provenance == Provenance::Real)
        .flat_map(|s| s.tokens.iter().copied())
        .collect()
}

/// Token totals by origin. `total_tokens` of an assembly is always their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contributions {
    pub real_tokens: u64,
    pub generation_tokens: u64,
    pub wrapper_tokens: u64,
}

impl Contributions {
    pub fn total(&self) -> u64 {
        self.real_tokens + self.generation_tokens + self.wrapper_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedAssembly {
    pub doc_id: String,
    pub missing: Vec<GenerationKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub separator: SeparatorPolicy,
    #[serde(default)]
    pub completeness: Completeness,
}

impl AssemblyConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            separator: SeparatorPolicy::default(),
            completeness: Completeness::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub config: AssemblyConfig,
    pub megadocs: Vec<Megadoc>,
    pub skipped: Vec<SkippedAssembly>,
    /// Documents too short to split, kept whole in latent assembly.
    pub unsplit_docs: Vec<String>,
    pub contributions: Contributions,
    pub accounting: Accounting,
}

/// Token counts taken from the inputs rather than from the megadocs, so the
/// contributions can be checked against them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    /// All generation tokens in the pool.
    pub pool_tokens: u64,
    /// Pool tokens belonging to documents that were not assembled.
    pub unused_generation_tokens: u64,
    pub corpus_tokens: u64,
    /// Real tokens the algorithm should carry: every assembled document once,
    /// or nothing when the real document is left out.
    pub expected_real_tokens: u64,
}

fn real_segment(doc: &Document) -> Segment {
    Segment {
        provenance: Provenance::Real,
        doc_id: doc.doc_id.clone(),
        gen_index: None,
        tokens: doc.tokens.clone(),
    }
}

fn check_pool(pool: &GenerationPool, corpus: &Corpus, algorithm: Algorithm) -> Result<(), MegadocError> {
    if pool.kind() != algorithm.pool_kind() {
        return Err(MegadocError::WrongKind {
            algorithm,
            expected: algorithm.pool_kind(),
            found: pool.kind(),
        });
    }
    if pool.manifest.corpus_hash != corpus.fingerprint() {
        return Err(MegadocError::Mismatch(
            "pool was generated from a different corpus".into(),
        ));
    }
    Ok(())
}

/// Collects the `G` generations of `doc`, or the keys that are absent.
fn rephrases_for<'p>(
    pool: &'p GenerationPool,
    doc: &Document,
) -> Result<Vec<&'p crate::genclient::pool::SyntheticGeneration>, Vec<GenerationKey>> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for i in 0..pool.generations() {
        let key = GenerationKey::rephrase(&doc.doc_id, i);
        match pool.get(&key) {
            Some(g) => found.push(g),
            None => missing.push(key),
        }
    }
    if missing.is_empty() {
        Ok(found)
    } else {
        Err(missing)
    }
}

fn finish(
    mut assembly: Assembly,
    missing: Vec<GenerationKey>,
    pool: &GenerationPool,
    corpus: &Corpus,
    includes_real: bool,
) -> Result<Assembly, MegadocError> {
    if !missing.is_empty() && assembly.config.completeness == Completeness::Strict {
        return Err(MegadocError::Missing(missing));
    }
    let skipped: std::collections::HashSet<&str> =
        assembly.skipped.iter().map(|s| s.doc_id.as_str()).collect();
    assembly.accounting = Accounting {
        pool_tokens: pool.total_tokens(),
        unused_generation_tokens: pool
            .records()
            .filter(|g| skipped.contains(g.key.doc_id.as_str()) || corpus.get(&g.key.doc_id).is_none())
            .map(|g| g.token_len() as u64)
            .sum(),
        corpus_tokens: corpus.total_tokens(),
        expected_real_tokens: corpus
            .docs()
            .iter()
            .filter(|d| includes_real && !skipped.contains(d.doc_id.as_str()))
            .map(|d| d.token_len() as u64)
            .sum(),
    };
    let mut c = Contributions::default();
    for m in &assembly.megadocs {
        for s in &m.segments {
            let n = s.tokens.len() as u64;
            match s.provenance {
                Provenance::Real => c.real_tokens += n,
                Provenance::Rephrase | Provenance::Thought => c.generation_tokens += n,
                Provenance::Wrapper => c.wrapper_tokens += n,
            }
        }
    }
    assembly.contributions = c;
    Ok(assembly)
}

fn empty_assembly(config: AssemblyConfig) -> Assembly {
    Assembly {
        config,
        megadocs: Vec::new(),
        skipped: Vec::new(),
        unsplit_docs: Vec::new(),
        contributions: Contributions::default(),
        accounting: Accounting::default(),
    }
}

pub fn assemble_simple(
    pool: &GenerationPool,
    corpus: &Corpus,
    include_real: bool,
    completeness: Completeness,
) -> Result<Assembly, MegadocError> {
    check_pool(pool, corpus, Algorithm::Simple)?;
    let mut out = empty_assembly(AssemblyConfig {
        algorithm: Algorithm::Simple,
        separator: SeparatorPolicy::default(),
        completeness,
    });
    let mut all_missing = Vec::new();
    for doc in corpus.docs() {
        let gens = match rephrases_for(pool, doc) {
            Ok(g) => g,
            Err(missing) => {
                out.skipped.push(SkippedAssembly {
                    doc_id: doc.doc_id.clone(),
                    missing: missing.clone(),
                });
                all_missing.extend(missing);
                continue;
            }
        };
        for g in gens {
            out.megadocs.push(Megadoc {
                megadoc_id: format!("{}/rephrase/{}", doc.doc_id, g.key.gen_index),
                algorithm: Algorithm::Simple,
                segments: vec![Segment {
                    provenance: Provenance::Rephrase,
                    doc_id: doc.doc_id.clone(),
                    gen_index: Some(g.key.gen_index),
                    tokens: g.tokens.clone(),
                }],
            });
        }
        if include_real {
            out.megadocs.push(Megadoc {
                megadoc_id: format!("{}/real", doc.doc_id),
                algorithm: Algorithm::Simple,
                segments: vec![real_segment(doc)],
            });
        }
    }
    finish(out, all_missing, pool, corpus, include_real)
}

pub fn assemble_stitched(
    pool: &GenerationPool,
    corpus: &Corpus,
    real_position: RealPosition,
    separator: SeparatorPolicy,
    completeness: Completeness,
) -> Result<Assembly, MegadocError> {
    let algorithm = match real_position {
        RealPosition::First => Algorithm::StitchRealFirst,
        RealPosition::Last => Algorithm::StitchRealLast,
        RealPosition::None => Algorithm::StitchNoReal,
    };
    check_pool(pool, corpus, algorithm)?;
    let mut out = empty_assembly(AssemblyConfig {
        algorithm,
        separator,
        completeness,
    });
    let mut all_missing = Vec::new();
    for doc in corpus.docs() {
        let gens = match rephrases_for(pool, doc) {
            Ok(g) => g,
            Err(missing) => {
                out.skipped.push(SkippedAssembly {
                    doc_id: doc.doc_id.clone(),
                    missing: missing.clone(),
                });
                all_missing.extend(missing);
                continue;
            }
        };
        let mut segments = Vec::with_capacity(gens.len() + 1);
        if real_position == RealPosition::First {
            segments.push(real_segment(doc));
        }
        segments.extend(gens.into_iter().map(|g| Segment {
            provenance: Provenance::Rephrase,
            doc_id: doc.doc_id.clone(),
            gen_index: Some(g.key.gen_index),
            tokens: g.tokens.clone(),
        }));
        if real_position == RealPosition::Last {
            segments.push(real_segment(doc));
        }
        if segments.is_empty() {
            continue;
        }
        out.megadocs.push(Megadoc {
            megadoc_id: format!("{}/stitched", doc.doc_id),
            algorithm,
            segments,
        });
    }
    finish(out, all_missing, pool, corpus, real_position != RealPosition::None)
}

pub fn assemble_latent(
    pool: &GenerationPool,
    corpus: &Corpus,
    tokenizer: &TokenizerSpec,
    completeness: Completeness,
) -> Result<Assembly, MegadocError> {
    check_pool(pool, corpus, Algorithm::Latent)?;
    let g = pool.generations() as usize;
    let mut out = empty_assembly(AssemblyConfig {
        algorithm: Algorithm::Latent,
        separator: SeparatorPolicy::default(),
        completeness,
    });
    let mut all_missing = Vec::new();
    for doc in corpus.docs() {
        let id = format!("{}/latent", doc.doc_id);
        let Some(cuts) = split_points(doc.token_len(), g) else {
            out.unsplit_docs.push(doc.doc_id.clone());
            out.megadocs.push(Megadoc {
                megadoc_id: id,
                algorithm: Algorithm::Latent,
                segments: vec![real_segment(doc)],
            });
            continue;
        };
        let keys: Vec<GenerationKey> = (0..g as u32)
            .map(|i| GenerationKey::latent(&doc.doc_id, i))
            .collect();
        let missing: Vec<GenerationKey> = keys
            .iter()
            .filter(|k| pool.get(k).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            out.skipped.push(SkippedAssembly {
                doc_id: doc.doc_id.clone(),
                missing: missing.clone(),
            });
            all_missing.extend(missing);
            continue;
        }
        let mut bounds = Vec::with_capacity(g + 2);
        bounds.push(0);
        bounds.extend(cuts);
        bounds.push(doc.token_len());
        let mut segments = Vec::with_capacity(4 * g + 1);
        for (i, piece) in bounds.windows(2).enumerate() {
            segments.push(Segment {
                provenance: Provenance::Real,
                doc_id: doc.doc_id.clone(),
                gen_index: None,
                tokens: doc.tokens[piece[0]..piece[1]].to_vec(),
            });
            if let Some(key) = keys.get(i) {
                let thought = pool.get(key).expect("checked above");
                let wrapper = |tokens: &[TokenId]| Segment {
                    provenance: Provenance::Wrapper,
                    doc_id: doc.doc_id.clone(),
                    gen_index: Some(key.gen_index),
                    tokens: tokens.to_vec(),
                };
                segments.push(wrapper(&tokenizer.think_open_ids));
                segments.push(Segment {
                    provenance: Provenance::Thought,
                    doc_id: doc.doc_id.clone(),
                    gen_index: Some(key.gen_index),
                    tokens: thought.tokens.clone(),
                });
                segments.push(wrapper(&tokenizer.think_close_ids));
            }
        }
        out.megadocs.push(Megadoc {
            megadoc_id: id,
            algorithm: Algorithm::Latent,
            segments,
        });
    }
    finish(out, all_missing, pool, corpus, true)
}

/// Dispatches on `config.algorithm` using the default real-document choices
/// for each family.
pub fn assemble(
    pool: &GenerationPool,
    corpus: &Corpus,
    config: &AssemblyConfig,
) -> Result<Assembly, MegadocError> {
    let mut assembly = match config.algorithm {
        Algorithm::Simple => assemble_simple(pool, corpus, true, config.completeness),
        Algorithm::StitchRealFirst => {
            assemble_stitched(pool, corpus, RealPosition::First, config.separator, config.completeness)
        }
        Algorithm::StitchRealLast => {
            assemble_stitched(pool, corpus, RealPosition::Last, config.separator, config.completeness)
        }
        Algorithm::StitchNoReal => {
            assemble_stitched(pool, corpus, RealPosition::None, config.separator, config.completeness)
        }
        Algorithm::Latent => assemble_latent(pool, corpus, &corpus.tokenizer, config.completeness),
    }?;
    assembly.config.separator = config.separator;
    Ok(assembly)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MegadocManifest {
    pub format_version: u32,
    pub config: AssemblyConfig,
    pub generations: u32,
    pub corpus_hash: String,
    pub megadoc_count: usize,
    pub total_tokens: u64,
    pub separator_tokens: u64,
    pub contributions: Contributions,
    pub accounting: Accounting,
    pub length_stats: TokenStats,
    pub skipped: Vec<SkippedAssembly>,
    pub unsplit_docs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentSpan {
    provenance: Provenance,
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gen_index: Option<u32>,
    start: u64,
    end: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MegadocEntry {
    megadoc_id: String,
    offset: u64,
    len: u64,
    segments: Vec<SegmentSpan>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MegadocIndex {
    manifest: MegadocManifest,
    megadocs: Vec<MegadocEntry>,
}

/// A persisted assembly: megadocs plus the manifest describing how they were made.
#[derive(Debug, Clone)]
pub struct MegadocSet {
    pub manifest: MegadocManifest,
    pub megadocs: Vec<Megadoc>,
}

impl MegadocSet {
    pub fn from_assembly(assembly: Assembly, generations: u32, corpus_hash: String) -> Self {
        let sep = assembly.config.separator;
        let manifest = MegadocManifest {
            format_version: MEGADOC_FORMAT_VERSION,
            config: assembly.config,
            generations,
            corpus_hash,
            megadoc_count: assembly.megadocs.len(),
            total_tokens: assembly.contributions.total(),
            separator_tokens: assembly
                .megadocs
                .iter()
                .map(|m| m.separator_count(sep) as u64)
                .sum(),
            contributions: assembly.contributions,
            accounting: assembly.accounting,
            length_stats: TokenStats::from_lengths(
                assembly.megadocs.iter().map(Megadoc::total_tokens).collect(),
            ),
            skipped: assembly.skipped,
            unsplit_docs: assembly.unsplit_docs,
        };
        Self {
            manifest,
            megadocs: assembly.megadocs,
        }
    }

    pub fn files(dir: &Path) -> (PathBuf, PathBuf) {
        (dir.join(MEGADOC_BIN), dir.join(MEGADOC_INDEX))
    }

    pub fn write(&self, dir: &Path) -> Result<(), MegadocError> {
        fs::create_dir_all(dir)?;
        let mut arena_tokens = Vec::with_capacity(self.manifest.total_tokens as usize);
        let mut entries = Vec::with_capacity(self.megadocs.len());
        for m in &self.megadocs {
            let offset = arena_tokens.len() as u64;
            let mut spans = Vec::with_capacity(m.segments.len());
            for s in &m.segments {
                let start = arena_tokens.len() as u64 - offset;
                arena_tokens.extend_from_slice(&s.tokens);
                spans.push(SegmentSpan {
                    provenance: s.provenance,
                    doc_id: s.doc_id.clone(),
                    gen_index: s.gen_index,
                    start,
                    end: arena_tokens.len() as u64 - offset,
                });
            }
            entries.push(MegadocEntry {
                megadoc_id: m.megadoc_id.clone(),
                offset,
                len: arena_tokens.len() as u64 - offset,
                segments: spans,
            });
        }
        let (bin, index) = Self::files(dir);
        arena::write_arena(&bin, &arena_tokens)?;
        let idx = MegadocIndex {
            manifest: self.manifest.clone(),
            megadocs: entries,
        };
        arena::write_atomic(&index, &serde_json::to_vec_pretty(&idx)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, MegadocError> {
        let (bin, index) = Self::files(dir);
        Self::read_files(&bin, &index)
    }

    pub fn read_files(bin: &Path, index: &Path) -> Result<Self, MegadocError> {
        let tokens = arena::read_arena(bin)?;
        let idx: MegadocIndex = serde_json::from_slice(&fs::read(index)?)?;
        let algorithm = idx.manifest.config.algorithm;
        let mut megadocs = Vec::with_capacity(idx.megadocs.len());
        for e in idx.megadocs {
            let base = e.offset as usize;
            if base + e.len as usize > tokens.len() {
                return Err(MegadocError::Mismatch(format!(
                    "{} spans past the arena end",
                    e.megadoc_id
                )));
            }
            let segments = e
                .segments
                .into_iter()
                .map(|s| Segment {
                    provenance: s.provenance,
                    doc_id: s.doc_id,
                    gen_index: s.gen_index,
                    tokens: tokens[base + s.start as usize..base + s.end as usize].to_vec(),
                })
                .collect();
            megadocs.push(Megadoc {
                megadoc_id: e.megadoc_id,
                algorithm,
                segments,
            });
        }
        Ok(Self {
            manifest: idx.manifest,
            megadocs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::client::FinishReason;
    use crate::genclient::pool::{PoolManifest, SyntheticGeneration, POOL_FORMAT_VERSION};
    use crate::tokenizer::{ByteTokenizer, Tokenize, WrapperMode};

    fn corpus(lens: &[usize]) -> Corpus {
        let t = ByteTokenizer::new(WrapperMode::PlainText);
        let docs = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| Document {
                doc_id: format!("d{i}"),
                text: "x".repeat(l),
                tokens: (0..l as u32).map(|k| 97 + (k + i as u32) % 26).collect(),
            })
            .collect();
        Corpus::from_documents(t.spec().clone(), docs).unwrap()
    }

    fn manifest(kind: GenerationKind, g: u32, corpus: &Corpus) -> PoolManifest {
        PoolManifest {
            format_version: POOL_FORMAT_VERSION,
            kind,
            generations: g,
            model: "test".into(),
            prompts_hash: String::new(),
            temperature: 1.0,
            max_new_tokens: kind.max_new_tokens(),
            tokenizer: corpus.tokenizer.clone(),
            corpus_hash: corpus.fingerprint(),
            expected_requests: 0,
            generated: 0,
            skipped_requests: 0,
            failed: 0,
            length_finished: 0,
            length_finished_fraction: 0.0,
            token_stats: TokenStats::default(),
            skipped_docs: vec![],
            shards: vec![],
            complete: true,
        }
    }

    /// Generation `i` of doc `d` has `3 + i` tokens, all equal to `200 + i`.
    fn rephrase_pool(corpus: &Corpus, g: u32) -> GenerationPool {
        let gens = corpus.docs().iter().flat_map(|d| {
            (0..g).map(move |i| SyntheticGeneration {
                key: GenerationKey::rephrase(&d.doc_id, i),
                text: String::new(),
                tokens: vec![200 + i; 3 + i as usize],
                finish_reason: FinishReason::Stop,
            })
        });
        GenerationPool::from_generations(manifest(GenerationKind::Rephrase, g, corpus), gens.collect::<Vec<_>>())
    }

    fn latent_pool(corpus: &Corpus, g: u32) -> GenerationPool {
        let gens = corpus
            .docs()
            .iter()
            .filter(|d| d.token_len() > g as usize)
            .flat_map(|d| {
                (0..g).map(move |i| SyntheticGeneration {
                    key: GenerationKey::latent(&d.doc_id, i),
                    text: String::new(),
                    tokens: vec![150 + i; 2 + i as usize],
                    finish_reason: FinishReason::Stop,
                })
            });
        GenerationPool::from_generations(manifest(GenerationKind::LatentThought, g, corpus), gens.collect::<Vec<_>>())
    }

    #[test]
    fn simple_counts() {
        let c = corpus(&[5, 7]);
        let pool = rephrase_pool(&c, 3);
        let with = assemble_simple(&pool, &c, true, Completeness::Strict).unwrap();
        assert_eq!(with.megadocs.len(), 8);
        let without = assemble_simple(&pool, &c, false, Completeness::Strict).unwrap();
        assert_eq!(without.megadocs.len(), 6);
        assert!(with.megadocs.iter().all(|m| m.segments.len() == 1));
        // (3+4+5) tokens of rephrase per doc, plus real docs 5 and 7
        assert_eq!(with.contributions.total(), 2 * 12 + 12);
    }

    #[test]
    fn stitched_layouts() {
        let c = corpus(&[5, 7]);
        let pool = rephrase_pool(&c, 3);
        use Provenance::*;
        let last = assemble_stitched(&pool, &c, RealPosition::Last, SeparatorPolicy::BetweenAndAfter, Completeness::Strict).unwrap();
        assert_eq!(last.megadocs.len(), 2);
        assert_eq!(last.megadocs[0].provenance_sequence(), vec![Rephrase, Rephrase, Rephrase, Real]);
        let first = assemble_stitched(&pool, &c, RealPosition::First, SeparatorPolicy::BetweenAndAfter, Completeness::Strict).unwrap();
        assert_eq!(first.megadocs[1].provenance_sequence(), vec![Real, Rephrase, Rephrase, Rephrase]);
        let none = assemble_stitched(&pool, &c, RealPosition::None, SeparatorPolicy::BetweenAndAfter, Completeness::Strict).unwrap();
        assert_eq!(none.megadocs[0].provenance_sequence(), vec![Rephrase; 3]);
        let order: Vec<_> = last.megadocs[0].segments.iter().filter_map(|s| s.gen_index).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn separator_policies() {
        let c = corpus(&[2]);
        let pool = rephrase_pool(&c, 2);
        let a = assemble_stitched(&pool, &c, RealPosition::Last, SeparatorPolicy::BetweenAndAfter, Completeness::Strict).unwrap();
        let m = &a.megadocs[0];
        assert_eq!(m.unit_tokens(256, SeparatorPolicy::BetweenAndAfter), vec![200, 200, 200, 256, 201, 201, 201, 201, 256, 97, 98]);
        assert_eq!(m.unit_tokens(256, SeparatorPolicy::AfterOnly).len(), m.total_tokens());
        assert_eq!(m.separator_count(SeparatorPolicy::BetweenAndAfter), 2);
    }

    #[test]
    fn zero_generations_degenerate_to_real_doc() {
        let c = corpus(&[6]);
        let pool = rephrase_pool(&c, 0);
        let a = assemble_stitched(&pool, &c, RealPosition::Last, SeparatorPolicy::BetweenAndAfter, Completeness::Strict).unwrap();
        assert_eq!(a.megadocs[0].unit_tokens(256, SeparatorPolicy::BetweenAndAfter), c.docs()[0].tokens);
        let lp = latent_pool(&c, 0);
        let l = assemble_latent(&lp, &c, &c.tokenizer, Completeness::Strict).unwrap();
        assert_eq!(l.megadocs[0].unit_tokens(256, SeparatorPolicy::BetweenAndAfter), c.docs()[0].tokens);
    }

    #[test]
    fn latent_layout_and_strip() {
        let c = corpus(&[9]);
        let pool = latent_pool(&c, 2);
        let spec = ByteTokenizer::new(WrapperMode::Special).spec().clone();
        let a = assemble_latent(&pool, &c, &spec, Completeness::Strict).unwrap();
        let m = &a.megadocs[0];
        use Provenance::*;
        assert_eq!(
            m.provenance_sequence(),
            vec![Real, Wrapper, Thought, Wrapper, Real, Wrapper, Thought, Wrapper, Real]
        );
        assert_eq!(m.segments[1].tokens, vec![257]);
        assert_eq!(m.segments[3].tokens, vec![258]);
        assert_eq!(strip_thoughts(m), c.docs()[0].tokens);
        let lens: Vec<usize> = m.segments.iter().filter(|s| s.provenance == Real).map(|s| s.tokens.len()).collect();
        assert_eq!(lens, vec![3, 3, 3]);
        assert_eq!(a.contributions.wrapper_tokens, 4);
        // no internal EOS inside latent megadocs
        assert_eq!(m.unit_tokens(256, SeparatorPolicy::BetweenAndAfter).len(), m.total_tokens());
    }

    #[test]
    fn missing_generations_strict_vs_lenient() {
        let c = corpus(&[5, 7]);
        let full = rephrase_pool(&c, 2);
        let partial = GenerationPool::from_generations(
            full.manifest.clone(),
            full.records().filter(|g| g.key != GenerationKey::rephrase("d1", 1)).cloned().collect::<Vec<_>>(),
        );
        match assemble_simple(&partial, &c, true, Completeness::Strict) {
            Err(MegadocError::Missing(keys)) => assert_eq!(keys, vec![GenerationKey::rephrase("d1", 1)]),
            other => panic!("{other:?}"),
        }
        let lenient = assemble_stitched(&partial, &c, RealPosition::Last, SeparatorPolicy::BetweenAndAfter, Completeness::Lenient).unwrap();
        assert_eq!(lenient.megadocs.len(), 1);
        assert_eq!(lenient.skipped.len(), 1);
    }

    #[test]
    fn wrong_pool_kind_rejected() {
        let c = corpus(&[5]);
        let pool = rephrase_pool(&c, 1);
        assert!(matches!(
            assemble_latent(&pool, &c, &c.tokenizer, Completeness::Strict),
            Err(MegadocError::WrongKind { .. })
        ));
    }

    #[test]
    fn short_docs_stay_whole_in_latent() {
        let c = corpus(&[2, 10]);
        let pool = latent_pool(&c, 3);
        let a = assemble_latent(&pool, &c, &c.tokenizer, Completeness::Strict).unwrap();
        assert_eq!(a.unsplit_docs, vec!["d0".to_string()]);
        assert_eq!(a.megadocs[0].segments.len(), 1);
    }

    #[test]
    fn set_round_trip() {
        let c = corpus(&[9, 4]);
        let pool = latent_pool(&c, 2);
        let t = ByteTokenizer::new(WrapperMode::PlainText);
        let a = assemble_latent(&pool, &c, t.spec(), Completeness::Strict).unwrap();
        let set = MegadocSet::from_assembly(a, 2, c.fingerprint());
        let dir = tempfile::tempdir().unwrap();
        set.write(dir.path()).unwrap();
        let back = MegadocSet::read(dir.path()).unwrap();
        assert_eq!(back.megadocs, set.megadocs);
        assert_eq!(back.manifest, set.manifest);
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("stitch-real-last".parse::<Algorithm>().unwrap(), Algorithm::StitchRealLast);
        assert!("bogus".parse::<Algorithm>().is_err());
    }
}
