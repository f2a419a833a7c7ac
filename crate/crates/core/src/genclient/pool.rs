//! Resumable on-disk generation pool and the request fan-out that fills it.
//!
//! Layout of a pool directory:
//!
//! - `manifest.json`: parameters, counts and token stats
//! - `gens-NNNNN.jsonl`: canonical shards, records sorted by key
//! - `failures.jsonl`: requests that exhausted their retries in the last run
//! - `journal.jsonl`: append-only log of an in-progress run, folded into the
//!   shards when the run finishes
//!
//! Finished runs rewrite the shards in key order, so a pool's bytes do not
//! depend on request completion order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ChatBackend, ChatMessage, ChatRequest, FinishReason, RetryPolicy};
use super::prompts::{self, RenderedPrompt};
use crate::arena::write_atomic;
use crate::corpus::Corpus;
use crate::rng;
use crate::tokenizer::{TokenId, Tokenize, TokenizerSpec};

pub const POOL_FORMAT_VERSION: u32 = 1;
pub const POOL_MANIFEST: &str = "manifest.json";
const JOURNAL: &str = "journal.jsonl";
const FAILURES: &str = "failures.jsonl";

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const REPHRASE_MAX_TOKENS: u32 = 1024;
pub const LATENT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: line {line}: {source}")]
    Record {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("existing pool is incompatible: {0}")]
    Incompatible(String),
    #[error("pool at {0} is incomplete; pass resume to continue it")]
    ResumeRequired(String),
    #[error("parallelism must be at least 1")]
    NoWorkers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationKind {
    Rephrase,
    LatentThought,
}

impl GenerationKind {
    pub fn max_new_tokens(self) -> u32 {
        match self {
            Self::Rephrase => REPHRASE_MAX_TOKENS,
            Self::LatentThought => LATENT_MAX_TOKENS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rephrase => "rephrase",
            Self::LatentThought => "latent_thought",
        }
    }
}

/// Identity of one generation. For latent thoughts `gen_index` equals the
/// split index: each split point carries exactly one rationale.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenerationKey {
    pub doc_id: String,
    pub kind: GenerationKind,
    pub gen_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_index: Option<u32>,
}

impl GenerationKey {
    pub fn rephrase(doc_id: &str, gen_index: u32) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            kind: GenerationKind::Rephrase,
            gen_index,
            split_index: None,
        }
    }

    pub fn latent(doc_id: &str, split_index: u32) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            kind: GenerationKind::LatentThought,
            gen_index: split_index,
            split_index: Some(split_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub key: GenerationKey,
    pub prompt: RenderedPrompt,
    pub temperature: f64,
    pub max_new_tokens: u32,
}

impl GenerationRequest {
    pub fn to_chat(&self, model: &str) -> ChatRequest {
        ChatRequest {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: self.prompt.system.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: self.prompt.user.clone(),
                },
            ],
            temperature: self.temperature,
            max_tokens: self.max_new_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGeneration {
    #[serde(flatten)]
    pub key: GenerationKey,
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub finish_reason: FinishReason,
}

impl SyntheticGeneration {
    pub fn token_len(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    #[serde(flatten)]
    pub key: GenerationKey,
    pub reason: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDoc {
    pub doc_id: String,
    pub token_len: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub count: usize,
    pub total: u64,
    pub mean: f64,
    pub median: f64,
}

impl TokenStats {
    pub fn from_lengths(mut lens: Vec<usize>) -> Self {
        let n = lens.len();
        if n == 0 {
            return Self::default();
        }
        lens.sort_unstable();
        let total: u64 = lens.iter().map(|&l| l as u64).sum();
        let median = if n % 2 == 1 {
            lens[n / 2] as f64
        } else {
            (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
        };
        Self {
            count: n,
            total,
            mean: total as f64 / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub format_version: u32,
    pub kind: GenerationKind,
    pub generations: u32,
    pub model: String,
    pub prompts_hash: String,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub tokenizer: TokenizerSpec,
    pub corpus_hash: String,
    pub expected_requests: usize,
    pub generated: usize,
    pub skipped_requests: usize,
    pub failed: usize,
    pub length_finished: usize,
    pub length_finished_fraction: f64,
    pub token_stats: TokenStats,
    pub skipped_docs: Vec<SkippedDoc>,
    pub shards: Vec<String>,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct GenerationPool {
    pub manifest: PoolManifest,
    records: BTreeMap<GenerationKey, SyntheticGeneration>,
    pub failures: Vec<FailureRecord>,
}

impl GenerationPool {
    pub fn kind(&self) -> GenerationKind {
        self.manifest.kind
    }

    pub fn generations(&self) -> u32 {
        self.manifest.generations
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &GenerationKey) -> Option<&SyntheticGeneration> {
        self.records.get(key)
    }

    pub fn records(&self) -> impl Iterator<Item = &SyntheticGeneration> {
        self.records.values()
    }

    pub fn total_tokens(&self) -> u64 {
        self.records.values().map(|g| g.token_len() as u64).sum()
    }

    /// Builds a pool in memory, for callers that source generations elsewhere.
    pub fn from_generations(
        manifest: PoolManifest,
        generations: impl IntoIterator<Item = SyntheticGeneration>,
    ) -> Self {
        Self {
            manifest,
            records: generations.into_iter().map(|g| (g.key.clone(), g)).collect(),
            failures: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, PoolError> {
        let manifest: PoolManifest =
            serde_json::from_slice(&fs::read(dir.join(POOL_MANIFEST))?)?;
        let mut records = BTreeMap::new();
        for shard in &manifest.shards {
            for g in read_jsonl::<SyntheticGeneration>(&dir.join(shard))? {
                records.insert(g.key.clone(), g);
            }
        }
        let failures = if dir.join(FAILURES).exists() {
            read_jsonl(&dir.join(FAILURES))?
        } else {
            Vec::new()
        };
        Ok(Self {
            manifest,
            records,
            failures,
        })
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PoolError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a crash can leave a torn final journal line; it is simply re-requested
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) if path.ends_with(JOURNAL) => {
                log::warn!("ignoring torn journal line {}: {e}", i + 1);
            }
            Err(source) => {
                return Err(PoolError::Record {
                    path: path.display().to_string(),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub kind: GenerationKind,
    pub generations: u32,
    pub parallelism: usize,
    pub seed: u64,
    pub temperature: f64,
    pub retry: RetryPolicy,
    pub resume: bool,
    pub shard_size: usize,
}

impl GenerateConfig {
    pub fn new(kind: GenerationKind, generations: u32) -> Self {
        Self {
            kind,
            generations,
            parallelism: 8,
            seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            retry: RetryPolicy::default(),
            resume: false,
            shard_size: 10_000,
        }
    }
}

/// Every request a complete pool must contain, plus documents that cannot
/// take part and prompts that failed to render.
pub struct RequestPlan {
    pub requests: Vec<GenerationRequest>,
    pub skipped: Vec<SkippedDoc>,
    pub unrenderable: Vec<FailureRecord>,
    pub expected: usize,
}

pub fn plan_requests(
    corpus: &Corpus,
    tokenizer: &dyn Tokenize,
    kind: GenerationKind,
    generations: u32,
    temperature: f64,
) -> RequestPlan {
    let g = generations as usize;
    let mut plan = RequestPlan {
        requests: Vec::new(),
        skipped: Vec::new(),
        unrenderable: Vec::new(),
        expected: g * corpus.len(),
    };
    let max_new_tokens = kind.max_new_tokens();
    for doc in corpus.docs() {
        match kind {
            GenerationKind::Rephrase => {
                let prompt = prompts::render_rephrase_prompt(doc);
                plan.requests.extend((0..generations).map(|i| GenerationRequest {
                    key: GenerationKey::rephrase(&doc.doc_id, i),
                    prompt: prompt.clone(),
                    temperature,
                    max_new_tokens,
                }));
            }
            GenerationKind::LatentThought => {
                let cuts = match prompts::split_points_for(doc, g) {
                    Ok(c) => c,
                    Err(e) => {
                        if g > 0 {
                            plan.skipped.push(SkippedDoc {
                                doc_id: doc.doc_id.clone(),
                                token_len: doc.token_len(),
                                reason: e.to_string(),
                            });
                        }
                        continue;
                    }
                };
                for (i, cut) in cuts.into_iter().enumerate() {
                    let key = GenerationKey::latent(&doc.doc_id, i as u32);
                    match prompts::render_latent_prompt(doc, cut, tokenizer) {
                        Ok(prompt) => plan.requests.push(GenerationRequest {
                            key,
                            prompt,
                            temperature,
                            max_new_tokens,
                        }),
                        Err(e) => plan.unrenderable.push(FailureRecord {
                            key,
                            reason: e.to_string(),
                            attempts: 0,
                        }),
                    }
                }
            }
        }
    }
    plan
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Keys that were missing when the run started.
    pub keys_requested: usize,
    /// HTTP calls made, retries included.
    pub calls_made: usize,
    pub generated: usize,
    pub failed: usize,
}

enum Outcome {
    Done(SyntheticGeneration, usize),
    Failed(FailureRecord, usize),
}

fn run_request(
    req: &GenerationRequest,
    backend: &dyn ChatBackend,
    tokenizer: &dyn Tokenize,
    retry: &RetryPolicy,
) -> Outcome {
    let chat = req.to_chat(backend.model());
    let mut calls = 0;
    let mut transport_retries = 0;
    let mut empty_retried = false;
    loop {
        calls += 1;
        match backend.complete(&chat) {
            Ok(c) => {
                let tokens = tokenizer.encode(&c.text);
                if tokens.is_empty() {
                    if !empty_retried {
                        empty_retried = true;
                        continue;
                    }
                    return Outcome::Failed(
                        FailureRecord {
                            key: req.key.clone(),
                            reason: "endpoint returned empty text twice".into(),
                            attempts: calls as u32,
                        },
                        calls,
                    );
                }
                return Outcome::Done(
                    SyntheticGeneration {
                        key: req.key.clone(),
                        text: c.text,
                        tokens,
                        finish_reason: c.finish_reason,
                    },
                    calls,
                );
            }
            Err(e) => {
                if transport_retries >= retry.max_retries {
                    return Outcome::Failed(
                        FailureRecord {
                            key: req.key.clone(),
                            reason: e.to_string(),
                            attempts: calls as u32,
                        },
                        calls,
                    );
                }
                std::thread::sleep(retry.delay(transport_retries));
                transport_retries += 1;
            }
        }
    }
}

/// Fills `dir` with the generations `corpus` needs under `config`, issuing
/// only the requests whose keys are not already stored.
pub fn generate_pool(
    corpus: &Corpus,
    tokenizer: &dyn Tokenize,
    config: &GenerateConfig,
    backend: &dyn ChatBackend,
    dir: &Path,
) -> Result<(GenerationPool, GenerationReport), PoolError> {
    if config.parallelism == 0 {
        return Err(PoolError::NoWorkers);
    }
    fs::create_dir_all(dir)?;
    let plan = plan_requests(
        corpus,
        tokenizer,
        config.kind,
        config.generations,
        config.temperature,
    );
    let corpus_hash = corpus.fingerprint();
    let mut base = PoolManifest {
        format_version: POOL_FORMAT_VERSION,
        kind: config.kind,
        generations: config.generations,
        model: backend.model().to_string(),
        prompts_hash: prompts::prompts_hash(),
        temperature: config.temperature,
        max_new_tokens: config.kind.max_new_tokens(),
        tokenizer: tokenizer.spec().clone(),
        corpus_hash,
        expected_requests: plan.expected,
        generated: 0,
        skipped_requests: plan.skipped.len() * config.generations as usize,
        failed: 0,
        length_finished: 0,
        length_finished_fraction: 0.0,
        token_stats: TokenStats::default(),
        skipped_docs: plan.skipped.clone(),
        shards: Vec::new(),
        complete: false,
    };

    let mut records: BTreeMap<GenerationKey, SyntheticGeneration> = BTreeMap::new();
    let manifest_path = dir.join(POOL_MANIFEST);
    let journal_path = dir.join(JOURNAL);
    if manifest_path.exists() {
        let existing = GenerationPool::load(dir)?;
        check_compatible(&existing.manifest, &base)?;
        records = existing.records;
    }
    if journal_path.exists() {
        for g in read_jsonl::<SyntheticGeneration>(&journal_path)? {
            records.insert(g.key.clone(), g);
        }
    }
    let expected_keys: BTreeSet<&GenerationKey> = plan.requests.iter().map(|r| &r.key).collect();
    records.retain(|k, _| expected_keys.contains(k));

    let mut missing: Vec<&GenerationRequest> = plan
        .requests
        .iter()
        .filter(|r| !records.contains_key(&r.key))
        .collect();
    if !records.is_empty() && !missing.is_empty() && !config.resume {
        return Err(PoolError::ResumeRequired(dir.display().to_string()));
    }
    rng::shuffle(
        &mut missing,
        &mut rng::stream_rng(config.seed, rng::TAG_REQUEST_ORDER),
    );

    let mut report = GenerationReport {
        keys_requested: missing.len(),
        ..Default::default()
    };
    let mut failures: Vec<FailureRecord> = plan.unrenderable.clone();
    if !missing.is_empty() {
        let mut journal = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&journal_path)?,
        );
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<Outcome>();
        let workers = config.parallelism.min(missing.len());
        let missing_ref = &missing;
        let write_result: Result<(), PoolError> = std::thread::scope(|s| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = missing_ref.get(i) else { break };
                    let out = run_request(req, backend, tokenizer, &config.retry);
                    if tx.send(out).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // single writer: every record reaches the journal before the pool
            for out in rx {
                match out {
                    Outcome::Done(g, calls) => {
                        report.calls_made += calls;
                        report.generated += 1;
                        serde_json::to_writer(&mut journal, &g)?;
                        journal.write_all(b"\n")?;
                        journal.flush()?;
                        records.insert(g.key.clone(), g);
                    }
                    Outcome::Failed(f, calls) => {
                        report.calls_made += calls;
                        report.failed += 1;
                        log::warn!("generation {:?} failed: {}", f.key, f.reason);
                        failures.push(f);
                    }
                }
            }
            Ok(())
        });
        write_result?;
    }
    report.failed = failures.len();
    failures.sort_by(|a, b| a.key.cmp(&b.key));

    base.shards = write_shards(dir, &records, config.shard_size.max(1))?;
    let mut failure_bytes = Vec::new();
    for f in &failures {
        serde_json::to_writer(&mut failure_bytes, f)?;
        failure_bytes.push(b'\n');
    }
    if failures.is_empty() {
        let _ = fs::remove_file(dir.join(FAILURES));
    } else {
        write_atomic(&dir.join(FAILURES), &failure_bytes)?;
    }
    base.generated = records.len();
    base.failed = failures.len();
    base.length_finished = records
        .values()
        .filter(|g| g.finish_reason == FinishReason::Length)
        .count();
    base.length_finished_fraction = if records.is_empty() {
        0.0
    } else {
        base.length_finished as f64 / records.len() as f64
    };
    base.token_stats = TokenStats::from_lengths(records.values().map(|g| g.token_len()).collect());
    base.complete = base.generated + base.skipped_requests + base.failed == base.expected_requests
        && base.failed == 0;
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&base)?)?;
    let _ = fs::remove_file(&journal_path);

    Ok((
        GenerationPool {
            manifest: base,
            records,
            failures,
        },
        report,
    ))
}

fn check_compatible(old: &PoolManifest, new: &PoolManifest) -> Result<(), PoolError> {
    let mut diffs = Vec::new();
    if old.kind != new.kind {
        diffs.push(format!("kind {:?} vs {:?}", old.kind, new.kind));
    }
    if old.generations != new.generations {
        diffs.push(format!(
            "generations {} vs {} (use a fresh pool directory)",
            old.generations, new.generations
        ));
    }
    if old.prompts_hash != new.prompts_hash {
        diffs.push("prompt templates changed".into());
    }
    if old.temperature != new.temperature || old.max_new_tokens != new.max_new_tokens {
        diffs.push("sampling parameters changed".into());
    }
    if old.tokenizer != new.tokenizer {
        diffs.push("tokenizer changed".into());
    }
    if old.corpus_hash != new.corpus_hash {
        diffs.push("corpus changed".into());
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(PoolError::Incompatible(diffs.join("; ")))
    }
}

fn write_shards(
    dir: &Path,
    records: &BTreeMap<GenerationKey, SyntheticGeneration>,
    shard_size: usize,
) -> Result<Vec<String>, PoolError> {
    let all: Vec<&SyntheticGeneration> = records.values().collect();
    let mut names = Vec::new();
    for (i, chunk) in all.chunks(shard_size).enumerate() {
        let name = format!("gens-{i:05}.jsonl");
        let mut bytes = Vec::new();
        for g in chunk {
            serde_json::to_writer(&mut bytes, g)?;
            bytes.push(b'\n');
        }
        write_atomic(&dir.join(&name), &bytes)?;
        names.push(name);
    }
    // drop shards left over from a larger earlier layout
    for entry in fs::read_dir(dir)? {
        let path: PathBuf = entry?.path();
        let fname = path.file_name().and_then(|f| f.to_str()).unwrap_or("");
        if fname.starts_with("gens-") && fname.ends_with(".jsonl") && !names.iter().any(|n| n == fname)
        {
            fs::remove_file(&path)?;
        }
    }
    Ok(names)
}
