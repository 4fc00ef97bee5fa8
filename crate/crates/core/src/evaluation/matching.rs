//! One-to-one onset matching within a tolerance, and precision/recall/f.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the tolerance so that a difference equal to it survives
/// floating-point rounding of decimal times.
pub const MATCH_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        prf(self.tp, self.fp, self.fn_)
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub counts: Counts,
    /// Matched `(prediction index, truth index)` pairs in time order.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision, recall and f-score; every undefined ratio is 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fn_);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f }
}

fn check_sorted(times: &[f64], what: &str) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} contains a non-finite time")));
    }
    if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(format!(
            "{what} is not sorted at index {}: {} after {}",
            i + 1,
            times[i + 1],
            times[i]
        )));
    }
    Ok(())
}

/// Greedy two-pointer matching: each truth takes the earliest unmatched
/// prediction within tolerance. On a line with a common tolerance this
/// yields a maximum-cardinality matching.
pub fn match_onsets(pred: &[f64], truth: &[f64], tolerance_sec: f64) -> Result<MatchResult> {
    check_sorted(pred, "predictions")?;
    check_sorted(truth, "ground truth")?;
    if !(tolerance_sec >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tolerance_sec} must be >= 0")));
    }
    let tol = tolerance_sec + MATCH_SLACK;
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < pred.len() && j < truth.len() {
        if pred[i] < truth[j] - tol {
            i += 1;
        } else if pred[i] > truth[j] + tol {
            j += 1;
        } else {
            pairs.push((i, j));
            i += 1;
            j += 1;
        }
    }
    let tp = pairs.len();
    Ok(MatchResult {
        counts: Counts {
            tp,
            fp: pred.len() - tp,
            fn_: truth.len() - tp,
        },
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tp(pred: &[f64], truth: &[f64]) -> usize {
        match_onsets(pred, truth, 0.05).unwrap().counts.tp
    }

    #[test]
    fn basic_cases() {
        assert_eq!(tp(&[1.00], &[1.03]), 1);
        let m = match_onsets(&[1.00, 1.02], &[1.03], 0.05).unwrap();
        assert_eq!(m.counts, Counts { tp: 1, fp: 1, fn_: 0 });
        let m = match_onsets(&[], &[0.1, 0.2, 0.3], 0.05).unwrap();
        assert_eq!(m.counts, Counts { tp: 0, fp: 0, fn_: 3 });
        // exactly at the tolerance counts
        assert_eq!(tp(&[0.1], &[0.15]), 1);
        assert_eq!(tp(&[0.1], &[0.1501]), 0);
    }

    #[test]
    fn rejects_unsorted() {
        assert!(match_onsets(&[0.2, 0.1], &[], 0.05).is_err());
        assert!(match_onsets(&[], &[0.3, 0.1], 0.05).is_err());
        assert!(match_onsets(&[f64::NAN], &[], 0.05).is_err());
    }

    #[test]
    fn prf_conventions() {
        assert_eq!(prf(0, 0, 0), Prf { precision: 0.0, recall: 0.0, f: 0.0 });
        let p = prf(1, 1, 0);
        assert_eq!((p.precision, p.recall), (0.5, 1.0));
        assert!((p.f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(prf(7, 0, 0).f, 1.0);
    }

    fn times() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 0..10).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_shift_invariant(p in times(), t in times(), shift in -5.0f64..5.0) {
            let a = match_onsets(&p, &t, 0.05).unwrap().counts;
            prop_assert_eq!(a.tp, tp(&t, &p));
            let ps: Vec<f64> = p.iter().map(|x| x + shift).collect();
            let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
            prop_assert_eq!(match_onsets(&ps, &ts, 0.05).unwrap().counts, a);
            prop_assert_eq!(a.tp + a.fn_, t.len());
            prop_assert_eq!(a.tp + a.fp, p.len());
        }

        #[test]
        fn prf_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let s = prf(tp, fp, fn_);
            prop_assert!(s.f <= 1.0 + 1e-12);
            prop_assert!(s.f <= 2.0 * s.precision + 1e-12 && s.f <= 2.0 * s.recall + 1e-12);
        }
    }
}
