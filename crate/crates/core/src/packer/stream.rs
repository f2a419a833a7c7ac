//! Concat-and-chunk over a seeded permutation of units.

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, permutation, stream_rng};
use crate::tokenizer::TokenId;

use super::PackError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

impl Origin {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Real => crate::rng::TAG_REAL_STREAM,
            Self::Synthetic => crate::rng::TAG_SYNTHETIC_STREAM,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Synthetic => "synthetic",
        }
    }
}

/// One document or megadoc, without its trailing EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

/// `[start, end)` inside a window, covering part of unit `unit` (an index
/// into [`PackedStream::unit_ids`]). A unit's trailing EOS belongs to its span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: u32,
    pub end: u32,
    pub unit: u32,
}

impl Span {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWindow {
    pub index: usize,
    pub origin: Origin,
    pub tokens: Vec<TokenId>,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedStream {
    pub origin: Origin,
    pub context_len: usize,
    pub seed: u64,
    pub unit_ids: Vec<String>,
    /// Order in which units were laid on the tape.
    pub order: Vec<usize>,
    pub windows: Vec<PackedWindow>,
    pub tape_tokens: u64,
    pub dropped_tokens: u64,
}

impl PackedStream {
    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn seed_hex(&self) -> String {
        hex::encode(derive_seed(self.seed, self.origin.tag()))
    }
}

pub fn build_stream(
    units: &[Unit],
    origin: Origin,
    seed: u64,
    context_len: usize,
    eos: TokenId,
) -> Result<PackedStream, PackError> {
    if units.is_empty() {
        return Err(PackError::NoUnits(origin));
    }
    if context_len == 0 {
        return Err(PackError::InvalidPlan("context_len must be positive".into()));
    }
    let order = permutation(units.len(), &mut stream_rng(seed, origin.tag()));

    let mut tape = Vec::with_capacity(units.iter().map(|u| u.tokens.len() + 1).sum());
    // (tape offset where the unit starts, unit index)
    let mut starts = Vec::with_capacity(units.len());
    for &u in &order {
        starts.push((tape.len(), u));
        tape.extend_from_slice(&units[u].tokens);
        tape.push(eos);
    }
    let n_windows = tape.len() / context_len;
    if n_windows == 0 {
        return Err(PackError::NoFullWindow {
            origin,
            tape_tokens: tape.len() as u64,
            context_len,
        });
    }

    let mut windows = Vec::with_capacity(n_windows);
    let mut cursor = 0;
    for w in 0..n_windows {
        let lo = w * context_len;
        let hi = lo + context_len;
        while cursor + 1 < starts.len() && starts[cursor + 1].0 <= lo {
            cursor += 1;
        }
        let mut spans = Vec::new();
        let mut k = cursor;
        while k < starts.len() && starts[k].0 < hi {
            let (s, unit) = starts[k];
            let e = starts.get(k + 1).map_or(tape.len(), |x| x.0);
            spans.push(Span {
                start: (s.max(lo) - lo) as u32,
                end: (e.min(hi) - lo) as u32,
                unit: unit as u32,
            });
            k += 1;
        }
        windows.push(PackedWindow {
            index: w,
            origin,
            tokens: tape[lo..hi].to_vec(),
            spans,
        });
    }

    Ok(PackedStream {
        origin,
        context_len,
        seed,
        unit_ids: units.iter().map(|u| u.id.clone()).collect(),
        order,
        windows,
        tape_tokens: tape.len() as u64,
        dropped_tokens: (tape.len() - n_windows * context_len) as u64,
    })
}

/// Attention segment ids for `window`, starting at 1.
///
/// With masking on, the id increments at each span boundary, so a unit
/// keeps one id however many segments it has inside. Off, every position is 1.
pub fn emit_masks(window: &PackedWindow, mask_cross_doc: bool) -> Vec<u32> {
    let mut ids = vec![1u32; window.tokens.len()];
    if mask_cross_doc {
        for (i, s) in window.spans.iter().enumerate() {
            ids[s.start as usize..s.end as usize].fill(i as u32 + 1);
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(lens: &[usize]) -> Vec<Unit> {
        lens.iter()
            .enumerate()
            .map(|(i, &l)| Unit {
                id: format!("u{i}"),
                tokens: vec![10 + i as u32; l],
            })
            .collect()
    }

    #[test]
    fn tape_arithmetic() {
        let s = build_stream(&units(&[3, 5]), Origin::Real, 0, 4, 0).unwrap();
        assert_eq!(s.tape_tokens, 10);
        assert_eq!(s.window_count(), 2);
        assert_eq!(s.dropped_tokens, 2);
    }

    #[test]
    fn exact_fit_keeps_eos() {
        let s = build_stream(&units(&[3]), Origin::Real, 0, 4, 99).unwrap();
        assert_eq!(s.window_count(), 1);
        assert_eq!(s.dropped_tokens, 0);
        assert_eq!(s.windows[0].tokens, vec![10, 10, 10, 99]);
    }

    #[test]
    fn too_short_is_error() {
        assert!(matches!(
            build_stream(&units(&[1]), Origin::Real, 0, 8, 0),
            Err(PackError::NoFullWindow { .. })
        ));
        assert!(build_stream(&[], Origin::Real, 0, 8, 0).is_err());
    }

    #[test]
    fn spans_tile_and_follow_tape() {
        let us = units(&[7, 1, 12, 4, 9, 2]);
        let s = build_stream(&us, Origin::Synthetic, 5, 8, 0).unwrap();
        let mut expect = Vec::new();
        for &u in &s.order {
            expect.extend(std::iter::repeat_n(u as u32, us[u].tokens.len() + 1));
        }
        for w in &s.windows {
            assert_eq!(w.spans.first().unwrap().start, 0);
            assert_eq!(w.spans.last().unwrap().end as usize, s.context_len);
            for pair in w.spans.windows(2) {
                assert_eq!(pair[0].end, pair[1].start);
            }
            for sp in &w.spans {
                assert!(!sp.is_empty());
                for p in sp.start..sp.end {
                    assert_eq!(expect[w.index * 8 + p as usize], sp.unit);
                }
            }
        }
    }

    #[test]
    fn masks() {
        let w = PackedWindow {
            index: 0,
            origin: Origin::Real,
            tokens: vec![0; 10],
            spans: vec![
                Span { start: 0, end: 4, unit: 3 },
                Span { start: 4, end: 10, unit: 1 },
            ],
        };
        assert_eq!(emit_masks(&w, true), vec![1, 1, 1, 1, 2, 2, 2, 2, 2, 2]);
        assert_eq!(emit_masks(&w, false), vec![1; 10]);
    }
}
