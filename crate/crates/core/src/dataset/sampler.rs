//! Balanced mini-batch sampling.
//!
//! Batch contents are a pure function of `(seed, epoch, batch number)`:
//! each pool is walked through a per-epoch permutation, restarting with a new
//! permutation when a small pool runs out, and every slot gets its own crop
//! jitter.

use rand::seq::SliceRandom;

use super::window::jitter_draw;
use super::{SampleIndex, WindowLabel, WindowRef};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

pub const BATCH_SIZE: usize = 24;
/// Samples per batch in [`WindowLabel::ALL`] order: non-onset, onset, near-onset.
pub const BATCH_COMPOSITION: [usize; 3] = [12, 6, 6];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannedSample {
    pub window: WindowRef,
    pub label: WindowLabel,
    pub jitter: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub epoch: usize,
    pub number: usize,
    pub samples: Vec<PlannedSample>,
}

impl BatchPlan {
    /// Soft targets `[N, 2]`.
    pub fn targets(&self) -> Tensor<f32> {
        let data = self
            .samples
            .iter()
            .flat_map(|s| s.label.target().map(|v| v as f32))
            .collect();
        Tensor::from_vec(&[self.samples.len(), 2], data).expect("nonempty batch")
    }

    /// Sample counts per label in [`WindowLabel::ALL`] order.
    pub fn composition(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.samples {
            c[s.label.index()] += 1;
        }
        c
    }
}

pub struct BalancedSampler<'a> {
    index: &'a SampleIndex,
    seed: u64,
    max_jitter: f64,
}

impl<'a> BalancedSampler<'a> {
    pub fn new(index: &'a SampleIndex, seed: u64, max_jitter: f64) -> Result<Self> {
        for label in WindowLabel::ALL {
            if index.pool(label).is_empty() {
                return Err(Error::Dataset(format!(
                    "{} pool is empty for subjects {:?}",
                    label.name(),
                    index.subjects()
                )));
            }
        }
        if !(max_jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!("max_jitter {max_jitter} must be >= 0")));
        }
        Ok(BalancedSampler { index, seed, max_jitter })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.index.epoch_size().div_ceil(BATCH_SIZE).max(1)
    }

    fn permutation(&self, label: WindowLabel, epoch: usize, cycle: usize) -> Vec<u32> {
        let n = self.index.pool(label).len();
        let mut perm: Vec<u32> = (0..n as u32).collect();
        let mut rng = substream(self.seed, "pool", &[epoch as u64, label.index() as u64, cycle as u64]);
        perm.shuffle(&mut rng);
        perm
    }

    pub fn batch(&self, epoch: usize, number: usize) -> BatchPlan {
        let mut samples = Vec::with_capacity(BATCH_SIZE);
        for label in WindowLabel::ALL {
            let quota = BATCH_COMPOSITION[label.index()];
            let pool = self.index.pool(label);
            let mut cached: Option<(usize, Vec<u32>)> = None;
            for pos in number * quota..(number + 1) * quota {
                let cycle = pos / pool.len();
                if cached.as_ref().map(|c| c.0) != Some(cycle) {
                    cached = Some((cycle, self.permutation(label, epoch, cycle)));
                }
                let perm = &cached.as_ref().unwrap().1;
                samples.push(PlannedSample {
                    window: pool[perm[pos % pool.len()] as usize],
                    label,
                    jitter: (0.0, 0.0),
                });
            }
        }
        for (slot, s) in samples.iter_mut().enumerate() {
            let mut rng = substream(self.seed, "jitter", &[epoch as u64, number as u64, slot as u64]);
            s.jitter = jitter_draw(&mut rng, self.max_jitter);
        }
        samples.shuffle(&mut substream(self.seed, "order", &[epoch as u64, number as u64]));
        BatchPlan { epoch, number, samples }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_index;
    use crate::dataset::testutil::toy_dataset;

    fn index() -> SampleIndex {
        let onsets: Vec<f64> = [12, 25, 40, 52].iter().map(|&k| (k as f64 + 0.5) / 30.0).collect();
        let ds = toy_dataset(2, 1, 64, &onsets);
        build_index(&ds, &["subject0".into(), "subject1".into()], 2, 1).unwrap()
    }

    #[test]
    fn composition_and_targets() {
        let idx = index();
        let s = BalancedSampler::new(&idx, 5, 4.0).unwrap();
        for b in 0..20 {
            let plan = s.batch(b / 3, b);
            assert_eq!(plan.samples.len(), BATCH_SIZE);
            assert_eq!(plan.composition(), BATCH_COMPOSITION);
            let t = plan.targets();
            for (row, smp) in t.data().chunks(2).zip(&plan.samples) {
                assert_eq!(row[0] + row[1], 1.0);
                if smp.label == WindowLabel::NearOnset {
                    assert_eq!(row, [0.75, 0.25]);
                }
                assert!(smp.jitter.0.abs() <= 4.0 && smp.jitter.1.abs() <= 4.0);
                assert!(idx.pool(smp.label).contains(&smp.window));
            }
        }
    }

    #[test]
    fn batch_identity_is_pure() {
        let idx = index();
        let s = BalancedSampler::new(&idx, 5, 4.0).unwrap();
        let later = s.batch(3, 7);
        let _ = s.batch(0, 0);
        assert_eq!(s.batch(3, 7), later);
        assert_ne!(s.batch(3, 8), later);
        assert_ne!(BalancedSampler::new(&idx, 6, 4.0).unwrap().batch(3, 7), later);
    }

    #[test]
    fn no_repeats_until_pool_exhausted() {
        let idx = index();
        let s = BalancedSampler::new(&idx, 1, 0.0).unwrap();
        let non_onset = idx.pool(WindowLabel::NonOnset).len();
        let batches = non_onset / 12;
        let mut seen = std::collections::HashSet::new();
        for b in 0..batches {
            for smp in s.batch(0, b).samples {
                if smp.label == WindowLabel::NonOnset {
                    assert!(seen.insert(smp.window), "repeat within first pass");
                }
            }
        }
    }

    #[test]
    fn onset_draws_are_uniform() {
        let idx = index();
        let s = BalancedSampler::new(&idx, 11, 4.0).unwrap();
        let pool = idx.pool(WindowLabel::Onset);
        let per_epoch = s.batches_per_epoch();
        let batches = 10_000;
        let mut counts = std::collections::HashMap::new();
        for b in 0..batches {
            for smp in s.batch(b / per_epoch, b % per_epoch).samples {
                if smp.label == WindowLabel::Onset {
                    *counts.entry(smp.window).or_insert(0usize) += 1;
                }
            }
        }
        let draws = (batches * 6) as f64;
        let p = 1.0 / pool.len() as f64;
        let expected = draws * p;
        let sigma = (draws * p * (1.0 - p)).sqrt();
        for w in pool {
            let c = counts.get(w).copied().unwrap_or(0) as f64;
            assert!((c - expected).abs() <= 3.0 * sigma, "{w:?}: {c} vs {expected} ± {sigma}");
        }
    }

    #[test]
    fn empty_pool_is_named() {
        let ds = toy_dataset(1, 1, 30, &[]);
        let idx = build_index(&ds, &["subject0".into()], 1, 1).unwrap();
        let err = BalancedSampler::new(&idx, 0, 0.0).err().unwrap();
        assert!(err.to_string().contains("onset pool"), "{err}");
    }
}
