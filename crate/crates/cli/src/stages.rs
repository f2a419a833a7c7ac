//! The pipeline stages. Each one resolves its config, checks its upstream
//! manifests and writes into its own directory under the workspace.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use megadoc_core::analysis::{
    efficiency_ratio, effective_data, ensemble_loss, fit_power_law, fit_power_law_fixed_alpha,
    implied_loss, law_profile, read_boundaries, read_nll, split_loss, LogitTensor, LossPoint,
    PowerLawFit, SplitLoss,
};
use megadoc_core::arena::{sha256_file, write_atomic};
use megadoc_core::corpus::{Corpus, ValidationSplit};
use megadoc_core::genclient::mock::MockServer;
use megadoc_core::genclient::{generate_pool, ChatBackend, GenerateConfig, GenerationKind, GenerationPool, HttpBackend};
use megadoc_core::megadoc::{assemble, Algorithm, AssemblyConfig, Completeness, MegadocSet, SeparatorPolicy};
use megadoc_core::packer::{
    self, mask_file, megadoc_units, read_stream, real_units, write_masks, write_packed, write_steps,
    Origin, StreamPlan, STEPS_FILE,
};
use megadoc_core::presets::Preset;
use megadoc_core::report::{
    render_summary_markdown, render_table_markdown, scaling_table, summarize, Losses, RunSummary,
    ScalingInput, SummaryInputs,
};
use megadoc_core::search::{derive_ensemble_plan, local_search, ExternalEvaluator, Grid, SearchOptions, SearchState};
use megadoc_core::tokenizer::{BuiltinTokenizer, ByteTokenizer, TokenizerConfig, WhitespaceTokenizer, WrapperMode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fixture::fixture_jsonl;
use crate::workspace::{Outcome, Upstream, Workspace, STAGE_MANIFEST};

pub const CORPUS_NAME: &str = "corpus";
pub const SUMMARY_SUFFIX: &str = ".summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerChoice {
    Byte,
    ByteSpecial,
    Whitespace,
}

impl TokenizerChoice {
    fn from_preset(p: &Preset) -> Self {
        match p.tokenizer {
            TokenizerConfig::Byte { wrapper: WrapperMode::PlainText } => Self::Byte,
            TokenizerConfig::Byte { wrapper: WrapperMode::Special } => Self::ByteSpecial,
            TokenizerConfig::Whitespace { .. } => Self::Whitespace,
        }
    }
}

pub fn parse_kind(s: &str) -> Result<GenerationKind> {
    match s {
        "rephrase" => Ok(GenerationKind::Rephrase),
        "latent" | "latent_thought" | "latent-thought" => Ok(GenerationKind::LatentThought),
        _ => bail!("unknown generation kind {s:?}; expected rephrase or latent"),
    }
}

pub fn pool_name(kind: GenerationKind, generations: u32) -> String {
    format!("{}-g{generations}", kind.as_str())
}

pub fn run_name(algorithm: Algorithm, generations: u32) -> String {
    format!("{}-g{generations}", algorithm.as_str())
}

fn load_corpus(up: &Upstream) -> Result<(Corpus, BuiltinTokenizer)> {
    let corpus = Corpus::read(&up.dir)?;
    let config = corpus
        .tokenizer_config
        .clone()
        .ok_or_else(|| anyhow!("corpus in {} does not record its tokenizer", up.dir.display()))?;
    Ok((corpus, BuiltinTokenizer::from_config(&config)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

// ---- ingest

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub input: PathBuf,
    pub tokenizer: Option<TokenizerChoice>,
    pub limit: Option<usize>,
}

fn whitespace_vocab(input: &Path) -> Result<WhitespaceTokenizer> {
    let text = fs::read_to_string(input)?;
    let mut texts = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line)?;
        if let Some(t) = v.get("text").and_then(Value::as_str) {
            texts.push(t.to_string());
        }
    }
    Ok(WhitespaceTokenizer::from_texts(texts.iter().map(String::as_str)))
}

pub fn ingest(ws: &Workspace, args: &IngestArgs) -> Result<Outcome> {
    let input_sha = sha256_file(&args.input)
        .with_context(|| format!("reading input {}", args.input.display()))?;
    let choice = args.tokenizer.unwrap_or_else(|| TokenizerChoice::from_preset(&ws.preset));
    let config = json!({
        "input_name": args.input.file_name().map(|n| n.to_string_lossy().into_owned()),
        "input_sha256": input_sha,
        "tokenizer": choice,
        "limit": args.limit,
    });
    ws.begin("ingest", CORPUS_NAME, config, &[]).run_atomic(|dir| {
        let tok = match choice {
            TokenizerChoice::Byte => BuiltinTokenizer::Byte(ByteTokenizer::new(WrapperMode::PlainText)),
            TokenizerChoice::ByteSpecial => BuiltinTokenizer::Byte(ByteTokenizer::new(WrapperMode::Special)),
            TokenizerChoice::Whitespace => BuiltinTokenizer::Whitespace(whitespace_vocab(&args.input)?),
        };
        let mut corpus = Corpus::ingest(&args.input, &tok, args.limit)?;
        corpus.tokenizer_config = Some(tok.config());
        corpus.write(dir)?;
        let s = corpus.stats();
        log::info!(
            "ingested {} documents, {} tokens, {} empty skipped",
            s.doc_count,
            s.total_tokens,
            s.skipped_empty
        );
        Ok(())
    })
}

// ---- generate

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub kind: GenerationKind,
    pub generations: u32,
    pub temperature: Option<f64>,
    pub parallelism: usize,
    pub resume: bool,
}

/// `endpoint` is recorded in the side file only; it never enters a hash.
pub fn generate(
    ws: &Workspace,
    args: &GenerateArgs,
    backend: &dyn ChatBackend,
    endpoint: Option<&str>,
) -> Result<Outcome> {
    if args.generations == 0 {
        bail!("generation count must be at least 1");
    }
    let corpus_up = ws.require("ingest", CORPUS_NAME)?;
    let temperature = args.temperature.unwrap_or(ws.preset.temperature);
    let config = json!({
        "kind": args.kind,
        "generations": args.generations,
        "model": backend.model(),
        "temperature": temperature,
        "max_new_tokens": args.kind.max_new_tokens(),
    });
    let mut run = ws.begin("generate", &pool_name(args.kind, args.generations), config, &[&corpus_up]);
    run.endpoint = endpoint.map(str::to_string);
    run.run_in_place(|dir| {
        let (corpus, tok) = load_corpus(&corpus_up)?;
        let mut cfg = GenerateConfig::new(args.kind, args.generations);
        cfg.parallelism = args.parallelism.max(1);
        cfg.seed = ws.seed;
        cfg.temperature = temperature;
        cfg.resume = args.resume;
        let (pool, report) = generate_pool(&corpus, &tok, &cfg, backend, dir)?;
        let m = &pool.manifest;
        log::info!(
            "requested {} keys in {} calls: {} generated, {} failed, pool holds {} of {} expected ({} skipped)",
            report.keys_requested,
            report.calls_made,
            report.generated,
            report.failed,
            m.generated,
            m.expected_requests,
            m.skipped_requests
        );
        if m.length_finished > 0 {
            log::warn!(
                "{} generations ({:.1}%) stopped at the token limit",
                m.length_finished,
                100.0 * m.length_finished_fraction
            );
        }
        if !m.complete {
            bail!(
                "pool is incomplete: {} generation(s) failed; rerun with --resume to retry them",
                m.failed
            );
        }
        Ok(())
    })
}

// ---- assemble

#[derive(Debug, Clone)]
pub struct AssembleArgs {
    pub algorithm: Algorithm,
    pub generations: u32,
    pub separator: Option<SeparatorPolicy>,
    pub lenient: bool,
}

pub fn assemble_stage(ws: &Workspace, args: &AssembleArgs) -> Result<Outcome> {
    let corpus_up = ws.require("ingest", CORPUS_NAME)?;
    let pool_up = ws.require("generate", &pool_name(args.algorithm.pool_kind(), args.generations))?;
    let config = AssemblyConfig {
        algorithm: args.algorithm,
        separator: args.separator.unwrap_or(ws.preset.separator),
        completeness: if args.lenient { Completeness::Lenient } else { Completeness::Strict },
    };
    let hashed = json!({ "assembly": config, "generations": args.generations });
    ws.begin("assemble", &run_name(args.algorithm, args.generations), hashed, &[&corpus_up, &pool_up])
        .run_atomic(|dir| {
            let (corpus, _) = load_corpus(&corpus_up)?;
            let pool = GenerationPool::load(&pool_up.dir)?;
            let assembly = assemble(&pool, &corpus, &config)?;
            if !assembly.skipped.is_empty() {
                log::warn!("{} documents skipped for missing generations", assembly.skipped.len());
            }
            let set = MegadocSet::from_assembly(assembly, args.generations, corpus.fingerprint());
            log::info!(
                "{} megadocs, {} tokens",
                set.manifest.megadoc_count,
                set.manifest.total_tokens
            );
            set.write(dir)?;
            Ok(())
        })
}

// ---- pack

#[derive(Debug, Clone, Default)]
pub struct PackArgs {
    /// `None` packs the real stream alone.
    pub algorithm: Option<Algorithm>,
    pub generations: u32,
    pub name: Option<String>,
    pub context_len: Option<usize>,
    pub batch_size: Option<usize>,
    pub mixing_fraction: Option<f64>,
    pub real_epochs: Option<u32>,
    pub write_steps: bool,
}

pub fn pack_name(args: &PackArgs) -> String {
    args.name.clone().unwrap_or_else(|| match args.algorithm {
        Some(a) => run_name(a, args.generations),
        None => "real".to_string(),
    })
}

pub fn pack_stage(ws: &Workspace, args: &PackArgs) -> Result<Outcome> {
    let p = &ws.preset;
    let mixing = match (args.algorithm, args.mixing_fraction) {
        (_, Some(f)) => f,
        (Some(_), None) => p.mixing_fraction,
        (None, None) => 0.0,
    };
    if args.algorithm.is_none() && mixing != 0.0 {
        bail!("a positive mixing fraction needs --algorithm to supply the synthetic stream");
    }
    let plan = StreamPlan {
        context_len: args.context_len.unwrap_or(p.context_len),
        batch_size: args.batch_size.unwrap_or(p.batch_size),
        mixing_fraction: mixing,
        real_epochs: args.real_epochs.unwrap_or(p.real_epochs),
        seed: ws.seed,
        mask_cross_doc: p.mask_cross_doc,
    };
    plan.split()?;
    let corpus_up = ws.require("ingest", CORPUS_NAME)?;
    let mega_up = args
        .algorithm
        .map(|a| ws.require("assemble", &run_name(a, args.generations)))
        .transpose()?;
    let mut ups = vec![&corpus_up];
    ups.extend(mega_up.as_ref());
    let config = json!({
        "algorithm": args.algorithm,
        "generations": args.algorithm.map(|_| args.generations),
        "plan": plan,
        "write_steps": args.write_steps,
    });
    ws.begin("pack", &pack_name(args), config, &ups).run_atomic(|dir| {
        let (corpus, _) = load_corpus(&corpus_up)?;
        let eos = corpus.tokenizer.eos_id;
        let real = real_units(&corpus);
        let synth = match &mega_up {
            Some(u) => Some(megadoc_units(&MegadocSet::read(&u.dir)?, eos)),
            None => None,
        };
        let packed = packer::pack(&real, synth.as_deref(), &plan, eos)?;
        let m = write_packed(dir, &packed, &plan, &corpus.fingerprint())?;
        if args.write_steps {
            write_steps(&dir.join(STEPS_FILE), &packed.schedule)?;
        }
        log::info!(
            "{} real windows, {} synthetic windows, {} steps, {} real draws left over",
            m.real.windows,
            m.synthetic.as_ref().map_or(0, |s| s.windows),
            m.schedule.steps,
            m.schedule.real_remainder
        );
        Ok(())
    })
}

// ---- masks

#[derive(Debug, Clone)]
pub struct MasksArgs {
    pub pack: String,
    pub mask_cross_doc: Option<bool>,
}

pub fn masks_stage(ws: &Workspace, args: &MasksArgs) -> Result<Outcome> {
    let pack_up = ws.require("pack", &args.pack)?;
    let pm = packer::read_manifest(&pack_up.dir)?;
    let mask = args.mask_cross_doc.unwrap_or(pm.plan.mask_cross_doc);
    let config = json!({ "pack": args.pack, "mask_cross_doc": mask });
    ws.begin("masks", &args.pack, config, &[&pack_up]).run_atomic(|dir| {
        let mut origins = vec![Origin::Real];
        if pm.synthetic.is_some() {
            origins.push(Origin::Synthetic);
        }
        let mut hashes = BTreeMap::new();
        for o in origins {
            let windows = read_stream(&pack_up.dir, o, pm.plan.context_len)?;
            hashes.insert(o.as_str(), write_masks(&mask_file(dir, o), &windows, mask)?);
        }
        write_json(&dir.join("masks.json"), &json!({ "mask_cross_doc": mask, "sha256": hashes }))
    })
}

// ---- report

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossesFile {
    #[serde(default)]
    pub baseline: Option<f64>,
    #[serde(default)]
    pub runs: BTreeMap<String, Losses>,
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub name: String,
    /// Pack names; empty means every pack with a synthetic stream.
    pub packs: Vec<String>,
    pub losses: Option<PathBuf>,
    pub law: String,
}

/// A law profile name or a JSON file with `A`, `alpha` and `l_inf`.
pub fn resolve_law(spec: &str) -> Result<PowerLawFit> {
    match law_profile(spec) {
        Ok(l) => Ok(l),
        Err(_) if Path::new(spec).is_file() => read_json(Path::new(spec)),
        Err(e) => Err(e.into()),
    }
}

fn synthetic_packs(ws: &Workspace) -> Result<Vec<String>> {
    let dir = ws.root.join("pack");
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for e in fs::read_dir(&dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !e.path().join(STAGE_MANIFEST).exists() {
            continue;
        }
        let m = ws.require("pack", &name)?;
        if !m.manifest.config["algorithm"].is_null() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

pub fn report_stage(ws: &Workspace, args: &ReportArgs) -> Result<(Outcome, Vec<RunSummary>)> {
    let packs = if args.packs.is_empty() { synthetic_packs(ws)? } else { args.packs.clone() };
    if packs.is_empty() {
        bail!("no packed runs with a synthetic stream to report on");
    }
    let losses: LossesFile = match &args.losses {
        Some(p) => read_json(p)?,
        None => LossesFile::default(),
    };
    let law = resolve_law(&args.law)?;
    let corpus_up = ws.require("ingest", CORPUS_NAME)?;
    let mut runs = Vec::new();
    let mut ups = vec![corpus_up.clone()];
    for p in &packs {
        let pack_up = ws.require("pack", p)?;
        let cfg = &pack_up.manifest.config;
        let algorithm: Algorithm = cfg["algorithm"]
            .as_str()
            .ok_or_else(|| anyhow!("pack {p} has no synthetic stream"))?
            .parse()?;
        let g = cfg["generations"].as_u64().ok_or_else(|| anyhow!("pack {p} has no generation count"))? as u32;
        let mega_up = ws.require("assemble", &run_name(algorithm, g))?;
        let pool_up = ws.require("generate", &pool_name(algorithm.pool_kind(), g))?;
        runs.push((p.clone(), pack_up.dir.clone(), mega_up.dir.clone(), pool_up.dir.clone()));
        ups.extend([pack_up, mega_up, pool_up]);
    }
    let up_refs: Vec<&Upstream> = ups.iter().collect();
    let config = json!({ "packs": packs, "losses": losses, "law": law });
    let outcome = ws.begin("report", &args.name, config, &up_refs).run_atomic(|dir| {
        let (corpus, _) = load_corpus(&corpus_up)?;
        let hash = corpus.fingerprint();
        let stats = corpus.stats();
        let mut summaries = Vec::new();
        let mut md = String::new();
        for (label, pack_dir, mega_dir, pool_dir) in &runs {
            let pool = GenerationPool::load(pool_dir)?;
            let set = MegadocSet::read(mega_dir)?;
            let pm = packer::read_manifest(pack_dir)?;
            let run_losses = losses.runs.get(label).cloned().map(|mut l| {
                l.baseline = l.baseline.or(losses.baseline);
                l
            });
            let s = summarize(SummaryInputs {
                label,
                corpus_hash: &hash,
                corpus: &stats,
                pool: &pool.manifest,
                megadocs: &set,
                pack: &pm,
                losses: run_losses,
            })?;
            for c in s.checks.iter().filter(|c| !c.ok) {
                log::error!("{label}: check failed: {} ({} vs {})", c.name, c.lhs, c.rhs);
            }
            write_json(&dir.join(format!("{label}{SUMMARY_SUFFIX}")), &s)?;
            let one = render_summary_markdown(&s);
            write_atomic(&dir.join(format!("{label}.summary.md")), one.as_bytes())?;
            md.push_str(&one);
            md.push('\n');
            summaries.push(s);
        }
        let with_loss: Vec<ScalingInput> = summaries
            .iter()
            .filter_map(|s| ScalingInput::from_summary(s).ok())
            .collect();
        if !with_loss.is_empty() {
            let baseline = losses.baseline.or_else(|| megadoc_core::report::shared_baseline(&summaries));
            match scaling_table(&with_loss, baseline, &law) {
                Ok(t) => {
                    write_json(&dir.join("table.json"), &t)?;
                    let tm = render_table_markdown(&t);
                    write_atomic(&dir.join("table.md"), tm.as_bytes())?;
                    md.push_str(&tm);
                }
                Err(e) => log::warn!("no scaling table: {e}"),
            }
        }
        write_atomic(&dir.join("report.md"), md.as_bytes())?;
        Ok(())
    })?;
    let dir = ws.stage_dir("report", &args.name);
    let summaries = packs
        .iter()
        .map(|p| read_json(&dir.join(format!("{p}{SUMMARY_SUFFIX}"))))
        .collect::<Result<Vec<RunSummary>>>()?;
    Ok((outcome, summaries))
}

// ---- search

#[derive(Debug, Clone)]
pub struct SearchArgs {
    pub name: String,
    pub grid: Option<PathBuf>,
    /// Starting points, either `name=value,...` or comma-separated indices.
    pub starts: Vec<String>,
    pub budget: usize,
    pub command: String,
    pub parallelism: usize,
}

pub fn parse_start(grid: &Grid, s: &str) -> Result<Vec<usize>> {
    if s.contains('=') {
        let point = s
            .split(',')
            .map(|kv| {
                let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("bad start entry {kv:?}"))?;
                Ok((k.trim().to_string(), v.trim().parse::<f64>()?))
            })
            .collect::<Result<Vec<_>>>()?;
        grid.coord_of(&point)
            .ok_or_else(|| anyhow!("start {s:?} is not a grid point"))
    } else {
        let coord = s
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(Into::into))
            .collect::<Result<Vec<_>>>()?;
        if !grid.contains(&coord) {
            bail!("start {s:?} is outside the grid");
        }
        Ok(coord)
    }
}

pub fn search_stage(ws: &Workspace, args: &SearchArgs) -> Result<(Outcome, SearchState)> {
    let grid = match &args.grid {
        Some(p) => read_json::<Grid>(p)?,
        None => ws.preset.grid.clone(),
    };
    grid.validate()?;
    let starts = if args.starts.is_empty() {
        vec![(0..grid.dims.len())
            .map(|d| {
                let (lo, hi) = grid.bound(d);
                lo + (hi - lo) / 2
            })
            .collect()]
    } else {
        args.starts
            .iter()
            .map(|s| parse_start(&grid, s))
            .collect::<Result<Vec<_>>>()?
    };
    let config = json!({
        "grid": grid,
        "starts": starts,
        "budget": args.budget,
        "command": args.command,
    });
    let outcome = ws.begin("search", &args.name, config, &[]).run_in_place(|dir| {
        let state_path = dir.join("state.json");
        let resume = if state_path.exists() {
            log::info!("resuming from {}", state_path.display());
            Some(SearchState::load(&state_path)?)
        } else {
            None
        };
        let eval = ExternalEvaluator::new(&args.command, &grid, &dir.join("evals"))?;
        let opts = SearchOptions {
            parallelism: args.parallelism,
            checkpoint: Some(state_path.clone()),
        };
        let state = local_search(&grid, &starts, &eval, args.budget, &opts, resume)?;
        state.save(&state_path)?;
        let best = state.best().cloned();
        let ensemble = best
            .as_ref()
            .filter(|_| grid.dims.iter().any(|d| d.name == "epochs"))
            .map(|b| derive_ensemble_plan(&grid, &b.coord, "epochs"))
            .transpose()?;
        let result = json!({
            "status": state.status,
            "evaluations": state.evaluations.len(),
            "best": best,
            "certified": state.verify_certificate(),
            "ties": state.ties,
            "ensemble": ensemble,
        });
        log::info!("search finished: {}", result["status"]);
        write_json(&dir.join("result.json"), &result)
    })?;
    let state = SearchState::load(&ws.stage_dir("search", &args.name).join("state.json"))?;
    Ok((outcome, state))
}

// ---- analysis commands without workspace state

#[derive(Deserialize)]
#[serde(untagged)]
enum PointsFile {
    Bare(Vec<LossPoint>),
    Wrapped { points: Vec<LossPoint> },
}

pub fn fit_points(path: &Path, alpha: Option<f64>) -> Result<Value> {
    let points = match read_json::<PointsFile>(path)? {
        PointsFile::Bare(p) | PointsFile::Wrapped { points: p } => p,
    };
    let fit = match alpha {
        Some(a) => fit_power_law_fixed_alpha(&points, a)?,
        None => fit_power_law(&points, None)?,
    };
    let below = fit.asymptote_below(&points);
    if !below {
        log::warn!("fitted asymptote {} is not below every observed loss", fit.l_inf);
    }
    Ok(json!({ "fit": fit, "asymptote_below_all_points": below }))
}

pub fn efficiency(baseline: f64, loss: Option<f64>, ratio: Option<f64>, law: &str) -> Result<Value> {
    let law = resolve_law(law)?;
    match (loss, ratio) {
        (Some(l), None) => Ok(json!({
            "baseline_loss": baseline,
            "loss": l,
            "baseline_data": effective_data(baseline, &law)?,
            "data": effective_data(l, &law)?,
            "ratio": efficiency_ratio(baseline, l, &law)?,
        })),
        (None, Some(r)) => Ok(json!({
            "baseline_loss": baseline,
            "ratio": r,
            "implied_loss": implied_loss(baseline, r, &law)?,
        })),
        _ => bail!("give exactly one of --loss and --ratio"),
    }
}

/// Targets are raw little-endian `u32` ids.
pub fn read_targets(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % 4 != 0 {
        bail!("{} is not a whole number of u32 ids", path.display());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn ensemble(logits: &[PathBuf], targets: &Path) -> Result<Value> {
    let models = logits
        .iter()
        .map(|p| LogitTensor::read(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let targets = read_targets(targets)?;
    let loss = ensemble_loss(&models, &targets)?;
    Ok(json!({ "models": models.len(), "tokens": targets.len(), "loss": loss }))
}

pub fn split_loss_cmd(nll: &Path, boundaries: &Path, split: Option<&Path>) -> Result<SplitLoss> {
    let nll = read_nll(nll)?;
    let spans = read_boundaries(boundaries)?;
    let split = match split {
        Some(p) => read_json::<ValidationSplit>(p)?,
        None => ValidationSplit::external("all", spans.iter().map(|s| s.doc_id.clone()).collect()),
    };
    Ok(split_loss(&nll, &spans, &split)?)
}

// ---- smoke

pub const SMOKE_DOCS: usize = 20;
pub const SMOKE_GENERATIONS: u32 = 4;

#[derive(Debug, Clone)]
pub struct SmokeReport {
    pub summaries: Vec<RunSummary>,
    pub requests: usize,
    pub elapsed_seconds: f64,
}

/// The whole pipeline on the fixture corpus against an in-process mock
/// endpoint: both pool kinds, every algorithm, packing, masks and report.
pub fn smoke(root: &Path, seed: u64) -> Result<SmokeReport> {
    let clock = Instant::now();
    let ws = Workspace::open(root, seed, Preset::fixture())?;
    let input = root.join("fixture.jsonl");
    write_atomic(&input, fixture_jsonl(SMOKE_DOCS, seed).as_bytes())?;
    ingest(
        &ws,
        &IngestArgs {
            input,
            tokenizer: None,
            limit: None,
        },
    )?;

    let server = MockServer::start()?;
    let backend = HttpBackend::new(server.url(), "mock-echo", None);
    for kind in [GenerationKind::Rephrase, GenerationKind::LatentThought] {
        generate(
            &ws,
            &GenerateArgs {
                kind,
                generations: SMOKE_GENERATIONS,
                temperature: None,
                parallelism: 4,
                resume: true,
            },
            &backend,
            Some(server.url()),
        )?;
    }

    let mut packs = Vec::new();
    for algorithm in Algorithm::ALL {
        assemble_stage(
            &ws,
            &AssembleArgs {
                algorithm,
                generations: SMOKE_GENERATIONS,
                separator: None,
                lenient: false,
            },
        )?;
        let args = PackArgs {
            algorithm: Some(algorithm),
            generations: SMOKE_GENERATIONS,
            write_steps: true,
            ..PackArgs::default()
        };
        pack_stage(&ws, &args)?;
        let name = pack_name(&args);
        masks_stage(&ws, &MasksArgs { pack: name.clone(), mask_cross_doc: Some(true) })?;
        packs.push(name);
    }
    pack_stage(&ws, &PackArgs::default())?;

    let (_, summaries) = report_stage(
        &ws,
        &ReportArgs {
            name: "smoke".into(),
            packs,
            losses: None,
            law: megadoc_core::analysis::efficiency::STANDARD_RECIPE.into(),
        },
    )?;
    let failed: Vec<String> = summaries
        .iter()
        .flat_map(|s| s.checks.iter().filter(|c| !c.ok).map(move |c| format!("{}: {}", s.label, c.name)))
        .collect();
    if !failed.is_empty() {
        bail!("reconciliation checks failed: {}", failed.join("; "));
    }
    Ok(SmokeReport {
        summaries,
        requests: server.request_count(),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    })
}
