//! Run summaries, token reconciliation and generation-count scaling tables.
//!
//! Losses are always supplied by the caller; nothing here trains or
//! evaluates a model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::efficiency::{efficiency_ratio, EfficiencyError};
use crate::analysis::PowerLawFit;
use crate::corpus::CorpusStats;
use crate::genclient::pool::{GenerationKind, PoolManifest, TokenStats};
use crate::megadoc::{Algorithm, MegadocSet};
use crate::packer::PackManifest;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("artifacts come from different corpora: {0}")]
    HashMismatch(String),
    #[error("no baseline loss")]
    MissingBaseline,
    #[error("summary {0} has no loss")]
    MissingLoss(String),
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    /// Loss on held-out documents from the real distribution.
    pub iid: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: u64,
    pub rhs: u64,
    pub ok: bool,
}

impl Check {
    fn new(name: &str, lhs: u64, rhs: u64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            ok: lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower bound.
    pub lo: usize,
    /// Exclusive upper bound.
    pub hi: usize,
    pub count: usize,
}

/// Power-of-two buckets: `[0, 1)`, `[1, 2)`, `[2, 4)`, ...
pub fn length_histogram(lengths: &[usize]) -> Vec<HistogramBin> {
    let mut bins: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in lengths {
        let lo = if l == 0 { 0 } else { 1usize << (usize::BITS - 1 - l.leading_zeros()) };
        *bins.entry(lo).or_default() += 1;
    }
    bins.into_iter()
        .map(|(lo, count)| HistogramBin {
            lo,
            hi: if lo == 0 { 1 } else { lo * 2 },
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEcho {
    pub context_len: usize,
    pub batch_size: usize,
    pub mixing_fraction: f64,
    pub real_epochs: u32,
    pub steps: u64,
    pub real_per_batch: usize,
    pub synthetic_per_batch: usize,
    pub real_remainder: u64,
    pub synthetic_epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub algorithm: Algorithm,
    pub generations: u32,
    pub corpus_hash: String,
    pub corpus: CorpusStats,
    pub pool_kind: GenerationKind,
    pub pool_tokens: TokenStats,
    pub megadoc_count: usize,
    pub megadoc_tokens: TokenStats,
    pub megadoc_histogram: Vec<HistogramBin>,
    pub plan: PlanEcho,
    pub dropped_real_tokens: u64,
    pub dropped_synthetic_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Losses>,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

pub struct SummaryInputs<'a> {
    pub label: &'a str,
    pub corpus_hash: &'a str,
    pub corpus: &'a CorpusStats,
    pub pool: &'a PoolManifest,
    pub megadocs: &'a MegadocSet,
    pub pack: &'a PackManifest,
    pub losses: Option<Losses>,
}

/// Builds the summary and runs every token identity. A failing identity is
/// recorded in `checks`, not raised; mismatched corpora are an error.
pub fn summarize(inputs: SummaryInputs<'_>) -> Result<RunSummary, ReportError> {
    let SummaryInputs {
        label,
        corpus_hash,
        corpus,
        pool,
        megadocs,
        pack,
        losses,
    } = inputs;
    for (what, h) in [
        ("pool", &pool.corpus_hash),
        ("megadocs", &megadocs.manifest.corpus_hash),
        ("pack", &pack.corpus_hash),
    ] {
        if h != corpus_hash {
            return Err(ReportError::HashMismatch(format!(
                "{what} was built from corpus {h}, expected {corpus_hash}"
            )));
        }
    }
    let m = &megadocs.manifest;
    let s = &pack.schedule;
    let lengths: Vec<usize> = megadocs.megadocs.iter().map(|d| d.total_tokens()).collect();

    let mut checks = vec![
        Check::new(
            "pool requests: generated + failed + skipped = expected",
            (pool.generated + pool.failed + pool.skipped_requests) as u64,
            pool.expected_requests as u64,
        ),
        Check::new(
            "pool tokens: used + unused = pool total",
            m.contributions.generation_tokens + m.accounting.unused_generation_tokens,
            pool.token_stats.total,
        ),
        Check::new(
            "real tokens in megadocs = assembled documents",
            m.contributions.real_tokens,
            m.accounting.expected_real_tokens,
        ),
        Check::new(
            "megadoc tokens: real + generated + wrapper = total",
            m.contributions.total(),
            lengths.iter().map(|&l| l as u64).sum(),
        ),
        Check::new(
            "real tape: corpus tokens + one EOS per document",
            pack.real.tape_tokens,
            corpus.total_tokens + corpus.doc_count as u64,
        ),
        Check::new(
            "real tape = windows x context + dropped",
            pack.real.tape_tokens,
            pack.real.windows as u64 * pack.plan.context_len as u64 + pack.real.dropped_tokens,
        ),
        Check::new(
            "real epochs: steps x r + remainder = windows x E",
            s.steps * s.real_per_batch as u64 + s.real_remainder,
            s.real_windows as u64 * s.real_epochs as u64,
        ),
        Check::new(
            "synthetic draws = steps x s",
            s.synthetic_consumed,
            s.steps * s.synthetic_per_batch as u64,
        ),
    ];
    if let Some(syn) = &pack.synthetic {
        checks.push(Check::new(
            "synthetic tape: megadoc tokens + separators + one EOS per megadoc",
            syn.tape_tokens,
            m.total_tokens + m.separator_tokens + m.megadoc_count as u64,
        ));
        checks.push(Check::new(
            "synthetic tape = windows x context + dropped",
            syn.tape_tokens,
            syn.windows as u64 * pack.plan.context_len as u64 + syn.dropped_tokens,
        ));
    }

    Ok(RunSummary {
        label: label.to_string(),
        algorithm: m.config.algorithm,
        generations: m.generations,
        corpus_hash: corpus_hash.to_string(),
        corpus: corpus.clone(),
        pool_kind: pool.kind,
        pool_tokens: pool.token_stats.clone(),
        megadoc_count: m.megadoc_count,
        megadoc_tokens: TokenStats::from_lengths(lengths.clone()),
        megadoc_histogram: length_histogram(&lengths),
        plan: PlanEcho {
            context_len: pack.plan.context_len,
            batch_size: s.batch_size,
            mixing_fraction: s.mixing_fraction,
            real_epochs: s.real_epochs,
            steps: s.steps,
            real_per_batch: s.real_per_batch,
            synthetic_per_batch: s.synthetic_per_batch,
            real_remainder: s.real_remainder,
            synthetic_epochs: s.synthetic_epochs,
        },
        dropped_real_tokens: pack.real.dropped_tokens,
        dropped_synthetic_tokens: pack.synthetic.as_ref().map_or(0, |x| x.dropped_tokens),
        losses,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub label: String,
    pub algorithm: Option<Algorithm>,
    pub generations: u32,
    pub loss: f64,
    pub efficiency: f64,
    /// Loss did not drop relative to the previous row of the same algorithm.
    pub not_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub baseline: f64,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn flags(&self) -> usize {
        self.rows.iter().filter(|r| r.not_decreasing).count()
    }
}

/// A row of the scaling table before it is enriched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInput {
    pub label: String,
    pub algorithm: Option<Algorithm>,
    pub generations: u32,
    pub loss: f64,
}

impl ScalingInput {
    pub fn from_summary(s: &RunSummary) -> Result<Self, ReportError> {
        let loss = s
            .losses
            .as_ref()
            .ok_or_else(|| ReportError::MissingLoss(s.label.clone()))?
            .iid;
        Ok(Self {
            label: s.label.clone(),
            algorithm: Some(s.algorithm),
            generations: s.generations,
            loss,
        })
    }
}

/// Rows sorted by algorithm then generation count, each with its data
/// efficiency over `baseline` under `law`.
pub fn scaling_table(inputs: &[ScalingInput], baseline: Option<f64>, law: &PowerLawFit) -> Result<ScalingTable, ReportError> {
    let baseline = baseline.ok_or(ReportError::MissingBaseline)?;
    let mut sorted = inputs.to_vec();
    sorted.sort_by(|a, b| {
        (a.algorithm.map(Algorithm::as_str), a.generations)
            .cmp(&(b.algorithm.map(Algorithm::as_str), b.generations))
    });
    let mut rows = Vec::with_capacity(sorted.len());
    let mut prev: Option<(Option<Algorithm>, f64)> = None;
    for r in sorted {
        let not_decreasing = matches!(prev, Some((alg, l)) if alg == r.algorithm && r.loss >= l);
        prev = Some((r.algorithm, r.loss));
        rows.push(ScalingRow {
            efficiency: efficiency_ratio(baseline, r.loss, law)?,
            label: r.label,
            algorithm: r.algorithm,
            generations: r.generations,
            loss: r.loss,
            not_decreasing,
        });
    }
    Ok(ScalingTable { baseline, rows })
}

/// Shared baseline of a set of summaries, if they agree on one.
pub fn shared_baseline(summaries: &[RunSummary]) -> Option<f64> {
    let mut it = summaries.iter().filter_map(|s| s.losses.as_ref()?.baseline);
    let first = it.next()?;
    it.all(|b| b == first).then_some(first)
}

pub fn render_summary_markdown(s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {} ({}, G={})\n", s.label, s.algorithm, s.generations);
    let _ = writeln!(out, "| quantity | value |\n|---|---|");
    let _ = writeln!(out, "| documents | {} |", s.corpus.doc_count);
    let _ = writeln!(out, "| real tokens | {} |", s.corpus.total_tokens);
    let _ = writeln!(out, "| pool ({}) tokens | {} |", s.pool_kind.as_str(), s.pool_tokens.total);
    let _ = writeln!(out, "| pool mean / median | {:.1} / {:.1} |", s.pool_tokens.mean, s.pool_tokens.median);
    let _ = writeln!(out, "| megadocs | {} |", s.megadoc_count);
    let _ = writeln!(out, "| megadoc mean / median | {:.1} / {:.1} |", s.megadoc_tokens.mean, s.megadoc_tokens.median);
    let _ = writeln!(out, "| mixing f / real epochs E | {} / {} |", s.plan.mixing_fraction, s.plan.real_epochs);
    let _ = writeln!(out, "| steps T | {} |", s.plan.steps);
    let _ = writeln!(out, "| synthetic epochs | {:.3} |", s.plan.synthetic_epochs);
    let _ = writeln!(out, "| dropped tokens real / synthetic | {} / {} |", s.dropped_real_tokens, s.dropped_synthetic_tokens);
    if let Some(l) = &s.losses {
        let _ = writeln!(out, "| i.i.d. loss | {:.4} |", l.iid);
        for (k, v) in &l.splits {
            let _ = writeln!(out, "| {k} loss | {v:.4} |");
        }
    }
    let _ = writeln!(out, "\nMegadoc lengths:\n\n| tokens | count |\n|---|---|");
    for b in &s.megadoc_histogram {
        let _ = writeln!(out, "| [{}, {}) | {} |", b.lo, b.hi, b.count);
    }
    let _ = writeln!(out, "\nChecks:\n");
    for c in &s.checks {
        let mark = if c.ok { "ok" } else { "FAIL" };
        let _ = writeln!(out, "- {mark}: {} ({} vs {})", c.name, c.lhs, c.rhs);
    }
    out
}

pub fn render_table_markdown(t: &ScalingTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Baseline loss {:.4}\n", t.baseline);
    let _ = writeln!(out, "| run | algorithm | G | loss | data efficiency | flag |\n|---|---|---|---|---|---|");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.4} | {:.2}x | {} |",
            r.label,
            r.algorithm.map_or("-", Algorithm::as_str),
            r.generations,
            r.loss,
            r.efficiency,
            if r.not_decreasing { "not decreasing" } else { "" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::reference_law;

    fn input(g: u32, loss: f64) -> ScalingInput {
        ScalingInput {
            label: format!("g{g}"),
            algorithm: Some(Algorithm::Simple),
            generations: g,
            loss,
        }
    }

    #[test]
    fn table_ratios() {
        let t = scaling_table(&[input(32, 3.34), input(16, 3.41)], Some(3.55), &reference_law()).unwrap();
        assert_eq!(t.rows[0].generations, 16);
        assert!((t.rows[0].efficiency - 1.4668).abs() < 1e-3);
        assert!((t.rows[1].efficiency - 1.8005).abs() < 1e-3);
        assert_eq!(t.flags(), 0);
        assert_eq!(
            t.rows[1].efficiency,
            efficiency_ratio(3.55, 3.34, &reference_law()).unwrap()
        );
    }

    #[test]
    fn baseline_row_is_one() {
        let t = scaling_table(&[input(0, 3.55)], Some(3.55), &reference_law()).unwrap();
        assert!((t.rows[0].efficiency - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_flags() {
        let series: Vec<_> = [(1, 3.50), (2, 3.46), (4, 3.44), (8, 3.42)].iter().map(|&(g, l)| input(g, l)).collect();
        assert_eq!(scaling_table(&series, Some(3.55), &reference_law()).unwrap().flags(), 0);
        let bumpy = vec![input(1, 3.5), input(2, 3.52), input(4, 3.4)];
        let t = scaling_table(&bumpy, Some(3.55), &reference_law()).unwrap();
        assert_eq!(t.flags(), 1);
        assert!(t.rows[1].not_decreasing);
        assert!(matches!(scaling_table(&bumpy, None, &reference_law()), Err(ReportError::MissingBaseline)));
    }

    #[test]
    fn histogram_buckets() {
        let h = length_histogram(&[0, 1, 3, 3, 4, 7, 8, 1000]);
        let got: Vec<(usize, usize, usize)> = h.iter().map(|b| (b.lo, b.hi, b.count)).collect();
        assert_eq!(got, vec![(0, 1, 1), (1, 2, 1), (2, 4, 2), (4, 8, 2), (8, 16, 1), (512, 1024, 1)]);
    }
}
