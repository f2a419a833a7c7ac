use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};
use megadoc_cli::stages::{self, TokenizerChoice};
use megadoc_cli::{logging, Outcome, Workspace};
use megadoc_core::analysis::efficiency::STANDARD_RECIPE;
use megadoc_core::genclient::mock::MockServer;
use megadoc_core::genclient::HttpBackend;
use megadoc_core::megadoc::{Algorithm, SeparatorPolicy};
use megadoc_core::presets::Preset;
use serde::Serialize;

const API_KEY_VAR: &str = "MEGADOC_API_KEY";

#[derive(Parser)]
#[command(name = "megadoc", version, about = "Build megadoc training streams from a small corpus")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Workspace directory holding every stage's outputs.
    #[arg(long, global = true, default_value = "megadoc-ws")]
    workspace: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// `paper` or `fixture`, optionally prefixed with `preset:`.
    #[arg(long, global = true, default_value = "paper")]
    preset: String,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a JSONL corpus.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        tokenizer: Option<TokenizerChoice>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Fill a generation pool from a chat-completion endpoint.
    Generate {
        /// rephrase or latent.
        #[arg(long)]
        kind: String,
        #[arg(long, short = 'g')]
        generations: u32,
        /// Endpoint base URL; the key is read from MEGADOC_API_KEY.
        #[arg(long, conflicts_with = "mock")]
        endpoint: Option<String>,
        /// Serve requests from the built-in mock endpoint.
        #[arg(long)]
        mock: bool,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 8)]
        parallelism: usize,
        /// Keep existing generations and request only the missing ones.
        #[arg(long)]
        resume: bool,
    },
    /// Build megadocs from the corpus and a pool.
    Assemble {
        #[arg(long)]
        algorithm: Algorithm,
        #[arg(long, short = 'g')]
        generations: u32,
        #[arg(long, value_parser = parse_separator)]
        separator: Option<SeparatorPolicy>,
        /// Skip documents with missing generations instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Pack real and synthetic streams and schedule batches.
    Pack {
        /// Omit to pack the real stream alone.
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long, short = 'g', default_value_t = 0)]
        generations: u32,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        context_len: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Fraction of each batch drawn from the synthetic stream.
        #[arg(long)]
        mixing: Option<f64>,
        #[arg(long)]
        epochs: Option<u32>,
        /// Also write one JSON line per training step.
        #[arg(long)]
        write_steps: bool,
    },
    /// Write per-token document ids for a packed run.
    Masks {
        #[arg(long)]
        pack: String,
        #[arg(long, conflicts_with = "no_mask")]
        mask: bool,
        #[arg(long)]
        no_mask: bool,
    },
    /// Local hyperparameter search driven by an external command.
    Search {
        #[arg(long, default_value = "default")]
        name: String,
        /// Grid JSON; defaults to the preset grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Starting point as `name=value,...` or indices; repeatable.
        #[arg(long = "start")]
        starts: Vec<String>,
        #[arg(long)]
        budget: usize,
        /// Shell command with `{dim}` and `{output}` placeholders.
        #[arg(long)]
        command: String,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Fit `L = A / x^alpha + L_inf` to a JSON list of points.
    Fit {
        #[arg(long)]
        points: PathBuf,
        /// Hold the exponent fixed.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Data efficiency of a loss, or the loss implied by a ratio.
    Efficiency {
        #[arg(long)]
        baseline: f64,
        #[arg(long)]
        loss: Option<f64>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value = STANDARD_RECIPE)]
        law: String,
    },
    /// Loss of the averaged predictive distribution of several models.
    Ensemble {
        #[arg(long = "logits", required = true)]
        logits: Vec<PathBuf>,
        #[arg(long)]
        targets: PathBuf,
    },
    /// Mean token loss over the documents of a validation split.
    SplitLoss {
        #[arg(long)]
        nll: PathBuf,
        #[arg(long)]
        boundaries: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Summaries, reconciliation checks and the scaling table.
    Report {
        #[arg(long, default_value = "summary")]
        name: String,
        /// Packed runs to include; defaults to all with a synthetic stream.
        #[arg(long = "pack")]
        packs: Vec<String>,
        /// JSON with `baseline` and per-run `runs.<name>.iid`.
        #[arg(long)]
        losses: Option<PathBuf>,
        #[arg(long, default_value = STANDARD_RECIPE)]
        law: String,
    },
    /// Whole pipeline on the fixture corpus against the mock endpoint.
    Smoke,
}

fn parse_separator(s: &str) -> Result<SeparatorPolicy, String> {
    match s {
        "between" | "between_and_after" | "between-and-after" => Ok(SeparatorPolicy::BetweenAndAfter),
        "after" | "after_only" | "after-only" => Ok(SeparatorPolicy::AfterOnly),
        _ => Err(format!("unknown separator policy {s:?}; expected between or after")),
    }
}

fn report_outcome(o: &Outcome) {
    let m = o.manifest();
    if o.is_up_to_date() {
        println!("up-to-date: {}/{}", m.stage, m.name);
    } else {
        println!("done: {}/{}", m.stage, m.name);
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    let preset = Preset::named(&g.preset).ok_or_else(|| anyhow!("unknown preset {:?}", g.preset))?;
    let ws = || Workspace::open(&g.workspace, g.seed, preset.clone());
    match cli.command {
        Command::Ingest { input, tokenizer, limit } => {
            report_outcome(&stages::ingest(&ws()?, &stages::IngestArgs { input, tokenizer, limit })?);
        }
        Command::Generate {
            kind,
            generations,
            endpoint,
            mock,
            model,
            temperature,
            parallelism,
            resume,
        } => {
            let ws = ws()?;
            let args = stages::GenerateArgs {
                kind: stages::parse_kind(&kind)?,
                generations,
                temperature,
                parallelism,
                resume,
            };
            let server = if mock { Some(MockServer::start()?) } else { None };
            let url = match (&server, endpoint) {
                (Some(s), _) => s.url().to_string(),
                (None, Some(e)) => e,
                (None, None) => bail!("give --endpoint or --mock"),
            };
            let model = match (model, mock) {
                (Some(m), _) => m,
                (None, true) => "mock-echo".to_string(),
                (None, false) => bail!("--model is required with a real endpoint"),
            };
            let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
            let backend = HttpBackend::new(&url, model, key);
            report_outcome(&stages::generate(&ws, &args, &backend, Some(&url))?);
        }
        Command::Assemble {
            algorithm,
            generations,
            separator,
            lenient,
        } => {
            let args = stages::AssembleArgs {
                algorithm,
                generations,
                separator,
                lenient,
            };
            report_outcome(&stages::assemble_stage(&ws()?, &args)?);
        }
        Command::Pack {
            algorithm,
            generations,
            name,
            context_len,
            batch_size,
            mixing,
            epochs,
            write_steps,
        } => {
            let args = stages::PackArgs {
                algorithm,
                generations,
                name,
                context_len,
                batch_size,
                mixing_fraction: mixing,
                real_epochs: epochs,
                write_steps,
            };
            report_outcome(&stages::pack_stage(&ws()?, &args)?);
        }
        Command::Masks { pack, mask, no_mask } => {
            let mask_cross_doc = if mask { Some(true) } else if no_mask { Some(false) } else { None };
            report_outcome(&stages::masks_stage(&ws()?, &stages::MasksArgs { pack, mask_cross_doc })?);
        }
        Command::Search {
            name,
            grid,
            starts,
            budget,
            command,
            parallelism,
        } => {
            let args = stages::SearchArgs {
                name,
                grid,
                starts,
                budget,
                command,
                parallelism,
            };
            let (o, state) = stages::search_stage(&ws()?, &args)?;
            report_outcome(&o);
            print_json(&serde_json::json!({
                "status": state.status,
                "evaluations": state.evaluations.len(),
                "best": state.best(),
            }))?;
        }
        Command::Fit { points, alpha } => print_json(&stages::fit_points(&points, alpha)?)?,
        Command::Efficiency {
            baseline,
            loss,
            ratio,
            law,
        } => print_json(&stages::efficiency(baseline, loss, ratio, &law)?)?,
        Command::Ensemble { logits, targets } => print_json(&stages::ensemble(&logits, &targets)?)?,
        Command::SplitLoss { nll, boundaries, split } => {
            print_json(&stages::split_loss_cmd(&nll, &boundaries, split.as_deref())?)?
        }
        Command::Report {
            name,
            packs,
            losses,
            law,
        } => {
            let (o, summaries) = stages::report_stage(&ws()?, &stages::ReportArgs { name, packs, losses, law })?;
            report_outcome(&o);
            let mut ok = true;
            for s in &summaries {
                let failed = s.checks.iter().filter(|c| !c.ok).count();
                println!("{}: {} checks, {} failed", s.label, s.checks.len(), failed);
                ok &= failed == 0;
            }
            return Ok(ok);
        }
        Command::Smoke => {
            let r = stages::smoke(&g.workspace, g.seed)?;
            for s in &r.summaries {
                println!(
                    "{}: {} megadocs, {} steps, {} checks ok",
                    s.label,
                    s.megadoc_count,
                    s.plan.steps,
                    s.checks.len()
                );
            }
            println!("smoke ok: {} requests in {:.2}s", r.requests, r.elapsed_seconds);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(if cli.global.verbose { log::Level::Info } else { log::Level::Warn });
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
