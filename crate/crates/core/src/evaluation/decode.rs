//! Per-frame probability curve to onset times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Frames must exceed this probability to become onsets.
    pub threshold: f64,
    /// Accepted onsets are more than this many frames apart.
    pub nms_radius_frames: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            threshold: 0.5,
            nms_radius_frames: 2,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("decode threshold {} must be in [0, 1)", self.threshold)));
        }
        Ok(())
    }
}

/// Local maxima above the threshold, thinned greedily from the highest
/// (ties go to the earlier frame). Onsets are reported at frame centers.
pub fn decode_onsets(probs: &[f64], fps: f64, params: DecodeParams) -> Vec<f64> {
    let n = probs.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&k| {
            let p = probs[k];
            p > params.threshold && (k == 0 || p >= probs[k - 1]) && (k + 1 == n || p >= probs[k + 1])
        })
        .collect();
    candidates.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let r = params.nms_radius_frames;
    let mut kept: Vec<usize> = Vec::new();
    for k in candidates {
        if kept.iter().all(|&j| j.abs_diff(k) > r) {
            kept.push(k);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|k| (k as f64 + 0.5) / fps).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(threshold: f64, radius: usize) -> DecodeParams {
        DecodeParams {
            threshold,
            nms_radius_frames: radius,
        }
    }

    /// Every subset of frames that are above threshold, pairwise more than
    /// `radius` apart, and maximal under the greedy order must equal decode.
    fn brute_force(probs: &[f64], threshold: f64, radius: usize) -> Vec<usize> {
        let n = probs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut kept = vec![];
        for k in order {
            let local_max = (k == 0 || probs[k] >= probs[k - 1]) && (k + 1 == n || probs[k] >= probs[k + 1]);
            if probs[k] > threshold && local_max && kept.iter().all(|&j: &usize| j.abs_diff(k) > radius) {
                kept.push(k);
            }
        }
        kept.sort();
        kept
    }

    #[test]
    fn four_frame_case() {
        let probs = [0.1, 0.9, 0.8, 0.2];
        assert_eq!(brute_force(&probs, 0.5, 1), vec![1]);
        let t = decode_onsets(&probs, 30.0, params(0.5, 1));
        assert_eq!(t.len(), 1);
        assert!((t[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn below_threshold_and_plateau() {
        assert!(decode_onsets(&[0.1, 0.4, 0.49], 30.0, params(0.5, 1)).is_empty());
        assert!(decode_onsets(&[0.5, 0.5], 30.0, params(0.5, 1)).is_empty());
        let t = decode_onsets(&[0.9, 0.9], 30.0, params(0.5, 1));
        assert_eq!(t, vec![0.5 / 30.0]);
    }

    #[test]
    fn separated_peaks_survive() {
        let probs = [0.0, 0.8, 0.0, 0.0, 0.7, 0.0];
        assert_eq!(decode_onsets(&probs, 10.0, params(0.5, 2)), vec![0.15, 0.45]);
        assert_eq!(decode_onsets(&probs, 10.0, params(0.5, 3)), vec![0.15]);
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_separated(probs in proptest::collection::vec(0.0f64..1.0, 1..40), radius in 0usize..4) {
            let t = decode_onsets(&probs, 30.0, params(0.5, radius));
            let frames: Vec<usize> = t.iter().map(|&x| (x * 30.0 - 0.5).round() as usize).collect();
            prop_assert_eq!(&frames, &brute_force(&probs, 0.5, radius));
            prop_assert!(frames.windows(2).all(|w| w[1] - w[0] > radius));
        }
    }
}
