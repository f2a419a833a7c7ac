//! Real and synthetic training streams.

pub mod schedule;
pub mod stream;

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{self, sha256_file};
use crate::corpus::Corpus;
use crate::megadoc::MegadocSet;
use crate::tokenizer::TokenId;

pub use schedule::{schedule, synthetic_epochs, Batch, BatchSchedule, Slot, StreamPlan, DEFAULT_CONTEXT_LEN};
pub use stream::{build_stream, emit_masks, Origin, PackedStream, PackedWindow, Span, Unit};

pub const SCHEDULE_FILE: &str = "schedule.json";
pub const STEPS_FILE: &str = "schedule.steps.jsonl";

#[derive(Debug, Error)]
pub enum PackError {
    #[error("{0:?} stream has no units")]
    NoUnits(Origin),
    #[error("{origin:?} tape of {tape_tokens} tokens does not fill one {context_len}-token window")]
    NoFullWindow {
        origin: Origin,
        tape_tokens: u64,
        context_len: usize,
    },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("window file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn real_units(corpus: &Corpus) -> Vec<Unit> {
    corpus
        .docs()
        .iter()
        .map(|d| Unit {
            id: d.doc_id.clone(),
            tokens: d.tokens.clone(),
        })
        .collect()
}

/// Units for the synthetic stream, with internal separators applied according
/// to the set's separator policy.
pub fn megadoc_units(set: &MegadocSet, eos: TokenId) -> Vec<Unit> {
    let policy = set.manifest.config.separator;
    set.megadocs
        .iter()
        .map(|m| Unit {
            id: m.megadoc_id.clone(),
            tokens: m.unit_tokens(eos, policy),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub origin: Origin,
    pub units: usize,
    pub unit_tokens: u64,
    pub eos_tokens: u64,
    pub tape_tokens: u64,
    pub windows: usize,
    pub dropped_tokens: u64,
    pub seed: String,
    pub windows_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackManifest {
    pub corpus_hash: String,
    pub plan: StreamPlan,
    pub schedule: BatchSchedule,
    pub real: StreamSummary,
    pub synthetic: Option<StreamSummary>,
}

pub struct Packed {
    pub real: PackedStream,
    pub synthetic: Option<PackedStream>,
    pub schedule: BatchSchedule,
}

/// Builds both streams (in parallel) and the batch schedule.
pub fn pack(
    real: &[Unit],
    synthetic: Option<&[Unit]>,
    plan: &StreamPlan,
    eos: TokenId,
) -> Result<Packed, PackError> {
    plan.split()?;
    let (real_stream, synth_stream) = rayon::join(
        || build_stream(real, Origin::Real, plan.seed, plan.context_len, eos),
        || {
            synthetic
                .map(|u| build_stream(u, Origin::Synthetic, plan.seed, plan.context_len, eos))
                .transpose()
        },
    );
    let real_stream = real_stream?;
    let synth_stream = synth_stream?;
    let sched = schedule(
        real_stream.window_count(),
        synth_stream.as_ref().map_or(0, |s| s.window_count()),
        plan,
    )?;
    Ok(Packed {
        real: real_stream,
        synthetic: synth_stream,
        schedule: sched,
    })
}

pub fn window_files(dir: &Path, origin: Origin) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{}.windows.bin", origin.as_str())),
        dir.join(format!("{}.windows.jsonl", origin.as_str())),
    )
}

pub fn mask_file(dir: &Path, origin: Origin) -> PathBuf {
    dir.join(format!("{}.masks.bin", origin.as_str()))
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    start: u32,
    end: u32,
    unit: u32,
    unit_id: String,
}

#[derive(Serialize, Deserialize)]
struct WindowRecord {
    window: usize,
    origin: Origin,
    /// Window tapes are identical on every pass; per-draw epochs live in the schedule.
    epoch_index: u64,
    spans: Vec<SpanRecord>,
}

fn u32_bytes(values: impl Iterator<Item = u32>) -> Vec<u8> {
    values.flat_map(u32::to_le_bytes).collect()
}

/// Writes raw little-endian windows (`context_len` ids each) and the JSONL sidecar.
pub fn write_stream(dir: &Path, stream: &PackedStream) -> Result<StreamSummary, PackError> {
    fs::create_dir_all(dir)?;
    let (bin, meta) = window_files(dir, stream.origin);
    let bytes = u32_bytes(stream.windows.iter().flat_map(|w| w.tokens.iter().copied()));
    arena::write_atomic(&bin, &bytes)?;

    let mut lines = Vec::new();
    for w in &stream.windows {
        let rec = WindowRecord {
            window: w.index,
            origin: w.origin,
            epoch_index: 0,
            spans: w
                .spans
                .iter()
                .map(|s| SpanRecord {
                    start: s.start,
                    end: s.end,
                    unit: s.unit,
                    unit_id: stream.unit_ids[s.unit as usize].clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut lines, &rec)?;
        lines.push(b'\n');
    }
    arena::write_atomic(&meta, &lines)?;

    let units = stream.unit_ids.len() as u64;
    Ok(StreamSummary {
        origin: stream.origin,
        units: stream.unit_ids.len(),
        unit_tokens: stream.tape_tokens - units,
        eos_tokens: units,
        tape_tokens: stream.tape_tokens,
        windows: stream.window_count(),
        dropped_tokens: stream.dropped_tokens,
        seed: stream.seed_hex(),
        windows_sha256: sha256_file(&bin)?,
    })
}

/// Reads windows back. Unit indices refer to the packing-time unit list.
pub fn read_stream(dir: &Path, origin: Origin, context_len: usize) -> Result<Vec<PackedWindow>, PackError> {
    let (bin, meta) = window_files(dir, origin);
    let bytes = fs::read(&bin)?;
    let width = context_len * 4;
    if context_len == 0 || bytes.len() % width != 0 {
        return Err(PackError::Format(format!(
            "{} bytes is not a whole number of {context_len}-token windows",
            bytes.len()
        )));
    }
    let reader = BufReader::new(fs::File::open(&meta)?);
    let mut windows = Vec::with_capacity(bytes.len() / width);
    for (chunk, line) in bytes.chunks_exact(width).zip(reader.lines()) {
        let rec: WindowRecord = serde_json::from_str(&line?)?;
        windows.push(PackedWindow {
            index: rec.window,
            origin: rec.origin,
            tokens: chunk
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            spans: rec
                .spans
                .into_iter()
                .map(|s| Span {
                    start: s.start,
                    end: s.end,
                    unit: s.unit,
                })
                .collect(),
        });
    }
    if windows.len() * width != bytes.len() {
        return Err(PackError::Format("metadata has fewer lines than windows".into()));
    }
    Ok(windows)
}

/// Writes `u32` segment ids, one per token, in window order.
pub fn write_masks(path: &Path, windows: &[PackedWindow], mask_cross_doc: bool) -> Result<String, PackError> {
    let bytes = u32_bytes(windows.iter().flat_map(|w| emit_masks(w, mask_cross_doc)));
    arena::write_atomic(path, &bytes)?;
    Ok(arena::sha256_hex(&bytes))
}

pub fn write_packed(
    dir: &Path,
    packed: &Packed,
    plan: &StreamPlan,
    corpus_hash: &str,
) -> Result<PackManifest, PackError> {
    let real = write_stream(dir, &packed.real)?;
    let synthetic = packed
        .synthetic
        .as_ref()
        .map(|s| write_stream(dir, s))
        .transpose()?;
    let manifest = PackManifest {
        corpus_hash: corpus_hash.to_string(),
        plan: plan.clone(),
        schedule: packed.schedule.clone(),
        real,
        synthetic,
    };
    arena::write_atomic(&dir.join(SCHEDULE_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// One JSON line per step listing its slots.
pub fn write_steps(path: &Path, schedule: &BatchSchedule) -> Result<(), PackError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        for b in schedule.batches() {
            serde_json::to_writer(&mut out, &b)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<PackManifest, PackError> {
    let mut m: PackManifest = serde_json::from_slice(&fs::read(dir.join(SCHEDULE_FILE))?)?;
    m.schedule.restore_orders();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(n: usize) -> Vec<Unit> {
        (0..n)
            .map(|i| Unit {
                id: format!("d{i}"),
                tokens: vec![1 + i as u32; 1 + (i * 7) % 11],
            })
            .collect()
    }

    fn plan() -> StreamPlan {
        StreamPlan {
            context_len: 8,
            batch_size: 4,
            mixing_fraction: 0.5,
            real_epochs: 2,
            seed: 11,
            mask_cross_doc: true,
        }
    }

    #[test]
    fn write_read_round_trip() {
        let p = pack(&units(30), Some(&units(40)), &plan(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_packed(dir.path(), &p, &plan(), "c").unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        let back = read_stream(dir.path(), Origin::Real, 8).unwrap();
        assert_eq!(back, p.real.windows);
        let s = m.synthetic.unwrap();
        assert_eq!(s.tape_tokens, s.windows as u64 * 8 + s.dropped_tokens);
    }

    #[test]
    fn streams_use_independent_permutations() {
        let u = units(30);
        let p = pack(&u, Some(&u), &plan(), 0).unwrap();
        assert_ne!(p.real.order, p.synthetic.unwrap().order);
    }
}
