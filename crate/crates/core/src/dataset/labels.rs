//! Frame and window labels.
//!
//! Frame `k` spans the half-open interval `[k / fps, (k + 1) / fps)`; it is an
//! onset frame when an onset time falls inside that interval. A window is
//! labeled by its reference frame: onset if the reference frame is an onset
//! frame, near-onset if a frame within `adjacency` of it is, else non-onset.

/// Per-frame label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameLabel {
    NonOnset,
    Onset,
}

/// Per-window label, with its soft training target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowLabel {
    NonOnset,
    Onset,
    NearOnset,
}

impl WindowLabel {
    pub const ALL: [WindowLabel; 3] = [WindowLabel::NonOnset, WindowLabel::Onset, WindowLabel::NearOnset];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowLabel::NonOnset => "non_onset",
            WindowLabel::Onset => "onset",
            WindowLabel::NearOnset => "near_onset",
        }
    }

    /// `(P(not-an-onset), P(onset))`.
    pub fn target(self) -> [f64; 2] {
        match self {
            WindowLabel::NonOnset => [1.0, 0.0],
            WindowLabel::Onset => [0.0, 1.0],
            WindowLabel::NearOnset => [0.75, 0.25],
        }
    }
}

/// Index of the frame whose half-open span contains time `t`.
pub fn onset_frame_index(t: f64, fps: f64) -> i64 {
    let mut k = (t * fps).floor() as i64;
    // correct for rounding in t * fps at exact frame boundaries
    if k as f64 / fps > t {
        k -= 1;
    }
    if (k + 1) as f64 / fps <= t {
        k += 1;
    }
    k
}

pub fn label_frame(onsets: &[f64], fps: f64, k: usize) -> FrameLabel {
    if onsets.iter().any(|&t| onset_frame_index(t, fps) == k as i64) {
        FrameLabel::Onset
    } else {
        FrameLabel::NonOnset
    }
}

pub fn onset_frame_flags(onsets: &[f64], fps: f64, duration_frames: usize) -> Vec<bool> {
    let mut flags = vec![false; duration_frames];
    for &t in onsets {
        let k = onset_frame_index(t, fps);
        if k >= 0 && (k as usize) < duration_frames {
            flags[k as usize] = true;
        }
    }
    flags
}

/// Window label from precomputed onset-frame flags.
pub fn classify_with_flags(flags: &[bool], ref_frame: usize, adjacency: usize) -> WindowLabel {
    if flags[ref_frame] {
        return WindowLabel::Onset;
    }
    let lo = ref_frame.saturating_sub(adjacency);
    let hi = (ref_frame + adjacency).min(flags.len() - 1);
    if (lo..=hi).any(|k| flags[k]) {
        WindowLabel::NearOnset
    } else {
        WindowLabel::NonOnset
    }
}

/// Window label with adjacency 1.
pub fn classify_window(onsets: &[f64], fps: f64, ref_frame: usize) -> WindowLabel {
    let n = ref_frame + 2;
    classify_with_flags(&onset_frame_flags(onsets, fps, n), ref_frame, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_spans_are_half_open() {
        assert_eq!(label_frame(&[1.005], 30.0, 30), FrameLabel::Onset);
        assert_eq!(label_frame(&[1.005], 30.0, 29), FrameLabel::NonOnset);
        for k in 1..200usize {
            let t = k as f64 / 30.0;
            assert_eq!(onset_frame_index(t, 30.0), k as i64, "k = {k}");
            assert_eq!(label_frame(&[t], 30.0, k - 1), FrameLabel::NonOnset);
        }
        assert!((0..100).all(|k| label_frame(&[], 30.0, k) == FrameLabel::NonOnset));
    }

    #[test]
    fn adjacency_and_precedence() {
        let t30 = 30.5 / 30.0;
        assert_eq!(classify_window(&[t30], 30.0, 29), WindowLabel::NearOnset);
        assert_eq!(classify_window(&[t30], 30.0, 31), WindowLabel::NearOnset);
        assert_eq!(classify_window(&[t30], 30.0, 30), WindowLabel::Onset);
        assert_eq!(classify_window(&[t30], 30.0, 28), WindowLabel::NonOnset);
        // onsets at 30 and 32: 31 sits between them and stays near-onset
        let t32 = 32.5 / 30.0;
        assert_eq!(classify_window(&[t30, t32], 30.0, 31), WindowLabel::NearOnset);
    }

    #[test]
    fn wider_adjacency() {
        let mut flags = vec![false; 20];
        flags[10] = true;
        assert_eq!(classify_with_flags(&flags, 8, 2), WindowLabel::NearOnset);
        assert_eq!(classify_with_flags(&flags, 8, 1), WindowLabel::NonOnset);
    }

    #[test]
    fn targets_are_distributions() {
        for l in WindowLabel::ALL {
            let t = l.target();
            assert_eq!(t[0] + t[1], 1.0);
        }
        assert_eq!(WindowLabel::NearOnset.target(), [0.75, 0.25]);
    }

    proptest! {
        #[test]
        fn onset_frames_never_near_onset(times in proptest::collection::vec(0.0f64..10.0, 0..30), k in 0usize..299) {
            let flags = onset_frame_flags(&times, 30.0, 300);
            let label = classify_with_flags(&flags, k, 1);
            if flags[k] {
                prop_assert_eq!(label, WindowLabel::Onset);
            } else {
                prop_assert_ne!(label, WindowLabel::Onset);
            }
        }

        #[test]
        fn onset_frame_count_bounded_by_onsets(mut times in proptest::collection::vec(0.0f64..10.0, 0..40)) {
            times.sort_by(f64::total_cmp);
            times.dedup();
            let flags = onset_frame_flags(&times, 30.0, 300);
            let frames = flags.iter().filter(|&&f| f).count();
            prop_assert!(frames <= times.len());
            let mut idx: Vec<i64> = times.iter().map(|&t| onset_frame_index(t, 30.0)).collect();
            idx.dedup();
            if idx.len() == times.len() {
                prop_assert_eq!(frames, times.len());
            }
        }
    }
}
