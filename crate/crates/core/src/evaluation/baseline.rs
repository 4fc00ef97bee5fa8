//! Random predictions that know how many onsets to place.

use rand::Rng;

use super::matching::match_onsets;
use crate::error::{Error, Result};
use crate::rng::substream;

/// F-score of each trial. Trial `i` draws `truth.len()` times uniformly in
/// `[0, duration_sec]` from its own substream, so the result does not depend
/// on how trials are scheduled.
pub fn informed_random_trials(truth: &[f64], duration_sec: f64, trials: usize, seed: u64, tolerance_sec: f64) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("baseline needs at least one trial".into()));
    }
    if !(duration_sec > 0.0) {
        return Err(Error::InvalidArgument(format!("duration {duration_sec} must be positive")));
    }
    let scores = crate::parallel::map_range(trials, |i| {
        let mut rng = substream(seed, "baseline", &[i as u64]);
        let mut pred: Vec<f64> = (0..truth.len()).map(|_| rng.random_range(0.0..=duration_sec)).collect();
        pred.sort_by(f64::total_cmp);
        match_onsets(&pred, truth, tolerance_sec).map(|m| m.counts.prf().f)
    });
    scores.into_iter().collect()
}

/// Mean f-score over `trials` informed random predictions.
pub fn informed_random_baseline(truth: &[f64], duration_sec: f64, trials: usize, seed: u64, tolerance_sec: f64) -> Result<f64> {
    let scores = informed_random_trials(truth, duration_sec, trials, seed, tolerance_sec)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, duration: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) * duration / n as f64).collect()
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(informed_random_baseline(&[], 10.0, 50, 1, 0.05).unwrap(), 0.0);
        // every draw is within tolerance of every truth
        let truth = grid(5, 0.05);
        assert_eq!(informed_random_baseline(&truth, 0.05, 100, 1, 0.05).unwrap(), 1.0);
        assert!(informed_random_baseline(&truth, 1.0, 0, 1, 0.05).is_err());
    }

    #[test]
    fn approaches_one_as_timeline_saturates() {
        let mut last = 0.0;
        for duration in [4.0, 1.0, 0.4, 0.15] {
            let f = informed_random_baseline(&grid(10, duration), duration, 400, 2, 0.05).unwrap();
            assert!(f > last, "{duration}: {f} <= {last}");
            last = f;
        }
        assert!(last > 0.95, "{last}");
    }

    #[test]
    fn deterministic_per_seed() {
        let truth = grid(120, 60.0);
        let a = informed_random_trials(&truth, 60.0, 200, 9, 0.05).unwrap();
        let b = informed_random_trials(&truth, 60.0, 200, 9, 0.05).unwrap();
        assert_eq!(a, b);
        crate::parallel::set_enabled(false);
        let c = informed_random_trials(&truth, 60.0, 200, 9, 0.05).unwrap();
        crate::parallel::set_enabled(true);
        assert_eq!(a, c);
    }
}
