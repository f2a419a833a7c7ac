//! Batch composition under a mixing fraction.
//!
//! The first `r` slots of every batch are real and the rest synthetic. Each
//! stream's windows are visited in a seeded random order that is the same on
//! every pass; the real stream stops after `E` passes, while the synthetic
//! stream just keeps cycling.

use serde::{Deserialize, Serialize};

use crate::rng::{permutation, stream_rng, TAG_REAL_WINDOWS, TAG_SYNTHETIC_WINDOWS};

use super::stream::Origin;
use super::PackError;

pub const DEFAULT_CONTEXT_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub context_len: usize,
    pub batch_size: usize,
    /// Fraction of each batch drawn from the synthetic stream.
    pub mixing_fraction: f64,
    pub real_epochs: u32,
    pub seed: u64,
    #[serde(default)]
    pub mask_cross_doc: bool,
}

impl StreamPlan {
    /// `(real, synthetic)` windows per batch.
    pub fn split(&self) -> Result<(usize, usize), PackError> {
        if self.batch_size == 0 {
            return Err(PackError::InvalidPlan("batch_size must be positive".into()));
        }
        if self.real_epochs == 0 {
            return Err(PackError::InvalidPlan("real_epochs must be at least 1".into()));
        }
        let f = self.mixing_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(PackError::InvalidPlan(format!(
                "mixing fraction {f} outside [0, 1]"
            )));
        }
        let synth = f * self.batch_size as f64;
        let rounded = synth.round();
        if (synth - rounded).abs() > 1e-9 {
            return Err(PackError::InvalidPlan(format!(
                "mixing fraction {f} times batch size {} is not an integer",
                self.batch_size
            )));
        }
        let s = rounded as usize;
        let r = self.batch_size - s;
        if r == 0 {
            return Err(PackError::InvalidPlan(
                "no real windows per batch, so the real stream is never consumed".into(),
            ));
        }
        Ok((r, s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub origin: Origin,
    pub window: usize,
    /// Which pass over the stream this draw comes from, starting at 0.
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub step: u64,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub batch_size: usize,
    pub mixing_fraction: f64,
    pub real_epochs: u32,
    pub real_per_batch: usize,
    pub synthetic_per_batch: usize,
    pub real_windows: usize,
    pub synthetic_windows: usize,
    pub steps: u64,
    pub real_consumed: u64,
    /// Real draws left over because `W_r * E` is not a multiple of `r`.
    pub real_remainder: u64,
    pub synthetic_consumed: u64,
    /// Passes over the synthetic stream, fractional.
    pub synthetic_epochs: f64,
    pub seed: u64,
    #[serde(skip)]
    real_order: Vec<usize>,
    #[serde(skip)]
    synthetic_order: Vec<usize>,
}

/// Steps are `floor(W_r * E / r)`; the leftover real draws are not trained
/// on and are reported in `real_remainder`.
pub fn schedule(
    real_windows: usize,
    synthetic_windows: usize,
    plan: &StreamPlan,
) -> Result<BatchSchedule, PackError> {
    let (r, s) = plan.split()?;
    if real_windows == 0 {
        return Err(PackError::InvalidPlan("real stream has no windows".into()));
    }
    if s > 0 && synthetic_windows == 0 {
        return Err(PackError::InvalidPlan(
            "mixing fraction is positive but the synthetic stream has no windows".into(),
        ));
    }
    let budget = real_windows as u64 * plan.real_epochs as u64;
    let steps = budget / r as u64;
    let synthetic_consumed = steps * s as u64;
    Ok(BatchSchedule {
        batch_size: plan.batch_size,
        mixing_fraction: plan.mixing_fraction,
        real_epochs: plan.real_epochs,
        real_per_batch: r,
        synthetic_per_batch: s,
        real_windows,
        synthetic_windows,
        steps,
        real_consumed: steps * r as u64,
        real_remainder: budget - steps * r as u64,
        synthetic_consumed,
        synthetic_epochs: if synthetic_windows == 0 {
            0.0
        } else {
            synthetic_consumed as f64 / synthetic_windows as f64
        },
        seed: plan.seed,
        real_order: window_order(real_windows, plan.seed, TAG_REAL_WINDOWS),
        synthetic_order: window_order(synthetic_windows, plan.seed, TAG_SYNTHETIC_WINDOWS),
    })
}

fn window_order(n: usize, seed: u64, tag: &str) -> Vec<usize> {
    permutation(n, &mut stream_rng(seed, tag))
}

impl BatchSchedule {
    /// Rebuilds the window orders after deserialization.
    pub fn restore_orders(&mut self) {
        self.real_order = window_order(self.real_windows, self.seed, TAG_REAL_WINDOWS);
        self.synthetic_order = window_order(self.synthetic_windows, self.seed, TAG_SYNTHETIC_WINDOWS);
    }

    fn slot(origin: Origin, draw: u64, order: &[usize]) -> Slot {
        let n = order.len() as u64;
        Slot {
            origin,
            window: order[(draw % n) as usize],
            epoch: draw / n,
        }
    }

    pub fn batch(&self, step: u64) -> Option<Batch> {
        if step >= self.steps {
            return None;
        }
        assert_eq!(self.real_order.len(), self.real_windows, "call restore_orders after loading");
        let r = self.real_per_batch as u64;
        let s = self.synthetic_per_batch as u64;
        let mut slots = Vec::with_capacity(self.batch_size);
        for j in 0..r {
            slots.push(Self::slot(Origin::Real, step * r + j, &self.real_order));
        }
        for j in 0..s {
            slots.push(Self::slot(Origin::Synthetic, step * s + j, &self.synthetic_order));
        }
        Some(Batch { step, slots })
    }

    pub fn batches(&self) -> impl Iterator<Item = Batch> + '_ {
        (0..self.steps).map(|t| self.batch(t).expect("step in range"))
    }
}

/// Passes over a synthetic stream of `synthetic_windows` after `steps` steps.
pub fn synthetic_epochs(steps: u64, synthetic_per_batch: usize, synthetic_windows: usize) -> f64 {
    steps as f64 * synthetic_per_batch as f64 / synthetic_windows as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(batch: usize, f: f64, e: u32) -> StreamPlan {
        StreamPlan {
            context_len: 8,
            batch_size: batch,
            mixing_fraction: f,
            real_epochs: e,
            seed: 0,
            mask_cross_doc: false,
        }
    }

    #[test]
    fn worked_example() {
        let s = schedule(100, 37, &plan(8, 0.75, 4)).unwrap();
        assert_eq!(s.real_per_batch, 2);
        assert_eq!(s.steps, 200);
        assert_eq!(s.synthetic_consumed, 1200);
        assert_eq!(s.real_remainder, 0);
    }

    #[test]
    fn real_only() {
        let s = schedule(100, 0, &plan(8, 0.0, 4)).unwrap();
        assert_eq!(s.steps, 50);
        assert!(s.batches().all(|b| b.slots.iter().all(|x| x.origin == Origin::Real)));
    }

    #[test]
    fn invalid_plans() {
        assert!(schedule(10, 10, &plan(8, 1.0, 1)).is_err());
        assert!(schedule(10, 10, &plan(64, 0.9, 1)).is_err());
        assert!(schedule(10, 10, &plan(8, 0.75, 0)).is_err());
        assert!(schedule(10, 0, &plan(8, 0.5, 1)).is_err());
    }

    #[test]
    fn remainder_reported() {
        let s = schedule(7, 5, &plan(4, 0.5, 3)).unwrap();
        assert_eq!(s.steps, 10);
        assert_eq!(s.real_consumed + s.real_remainder, 21);
        assert_eq!(s.real_remainder, 1);
    }

    #[test]
    fn epochs_repeat_one_permutation() {
        let s = schedule(5, 3, &plan(2, 0.5, 3)).unwrap();
        let draws = |o: Origin| -> Vec<(usize, u64)> {
            s.batches()
                .flat_map(|b| b.slots.into_iter())
                .filter(|x| x.origin == o)
                .map(|x| (x.window, x.epoch))
                .collect()
        };
        let real = draws(Origin::Real);
        assert_eq!(real.len(), 15);
        let first: Vec<usize> = real[..5].iter().map(|x| x.0).collect();
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        for (i, (w, e)) in real.iter().enumerate() {
            assert_eq!(*w, first[i % 5]);
            assert_eq!(*e, (i / 5) as u64);
        }
        let synth = draws(Origin::Synthetic);
        for (i, (w, _)) in synth.iter().enumerate() {
            assert_eq!(*w, synth[i % 3].0);
        }
    }

    #[test]
    fn orders_survive_serialization() {
        let s = schedule(9, 4, &plan(4, 0.5, 2)).unwrap();
        let mut back: BatchSchedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        back.restore_orders();
        assert_eq!(back.batches().collect::<Vec<_>>(), s.batches().collect::<Vec<_>>());
    }

    #[test]
    fn larger_pools_epoch_less() {
        let s = schedule(50, 40, &plan(8, 0.75, 4)).unwrap();
        let mut prev = f64::INFINITY;
        for w_s in [40, 80, 160, 320] {
            let e = synthetic_epochs(s.steps, s.synthetic_per_batch, w_s);
            assert!(e <= prev);
            prev = e;
        }
    }
}
