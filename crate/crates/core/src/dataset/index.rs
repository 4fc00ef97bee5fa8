//! Class-partitioned enumeration of in-bounds windows.

use super::{classify_with_flags, Dataset, WindowLabel};
use crate::error::{Error, Result};

/// A window identified by video index and reference frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowRef {
    pub video: usize,
    pub ref_frame: usize,
}

/// Every in-bounds window of a subject set, split by label.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleIndex {
    subjects: Vec<String>,
    pools: [Vec<WindowRef>; 3],
    da_factor: usize,
    adjacency: usize,
}

impl SampleIndex {
    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn pool(&self, label: WindowLabel) -> &[WindowRef] {
        &self.pools[label.index()]
    }

    pub fn da_factor(&self) -> usize {
        self.da_factor
    }

    pub fn adjacency(&self) -> usize {
        self.adjacency
    }

    pub fn total_windows(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    /// Samples per epoch: the onset pool, balanced to a quarter of every
    /// batch, repeated once per augmentation.
    pub fn epoch_size(&self) -> usize {
        epoch_size(self.pool(WindowLabel::Onset).len(), self.da_factor)
    }
}

/// Onset samples fill a quarter of every batch, so an epoch that shows each
/// onset window `da_factor` times holds `4 * onset_windows * da_factor`
/// samples.
pub fn epoch_size(onset_windows: usize, da_factor: usize) -> usize {
    4 * onset_windows * da_factor
}

pub fn build_index(dataset: &Dataset, subjects: &[String], da_factor: usize, adjacency: usize) -> Result<SampleIndex> {
    if subjects.is_empty() {
        return Err(Error::InvalidArgument("build_index needs at least one subject".into()));
    }
    if da_factor == 0 {
        return Err(Error::InvalidArgument("da_factor must be >= 1".into()));
    }
    let mut pools: [Vec<WindowRef>; 3] = Default::default();
    for id in subjects {
        let subject = dataset.subject(id)?;
        if subject.videos.is_empty() {
            return Err(Error::Dataset(format!("subject {id:?} has no videos")));
        }
        for &v in &subject.videos {
            let video = dataset.video(v);
            for k in video.window_range() {
                let label = classify_with_flags(&video.onset_frames, k, adjacency);
                pools[label.index()].push(WindowRef { video: v, ref_frame: k });
            }
        }
    }
    Ok(SampleIndex {
        subjects: subjects.to_vec(),
        pools,
        da_factor,
        adjacency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::toy_dataset;
    use std::collections::BTreeSet;

    #[test]
    fn pools_partition_in_bounds_windows() {
        // 40 frames: windows for ref 5..=36; onsets at frames 2, 10, 20, 38
        let onsets = [2.5 / 30.0, 10.5 / 30.0, 20.5 / 30.0, 38.5 / 30.0];
        let ds = toy_dataset(2, 2, 40, &onsets);
        let idx = build_index(&ds, &["subject0".into(), "subject1".into()], 4, 1).unwrap();
        assert_eq!(idx.total_windows(), 4 * 32);
        // frames 2 and 38 have no in-bounds window; 37 is out of range too
        assert_eq!(idx.pool(WindowLabel::Onset).len(), 4 * 2);
        assert_eq!(idx.pool(WindowLabel::NearOnset).len(), 4 * 4);
        let all: BTreeSet<_> = WindowLabel::ALL.iter().flat_map(|&l| idx.pool(l).iter().copied()).collect();
        assert_eq!(all.len(), idx.total_windows());
        assert!(all.iter().all(|w| w.ref_frame >= 5 && w.ref_frame + 3 < 40));
        assert_eq!(idx.epoch_size(), 4 * 8 * 4);
    }

    #[test]
    fn only_listed_subjects_and_deterministic() {
        let ds = toy_dataset(3, 1, 30, &[0.5]);
        let a = build_index(&ds, &["subject2".into()], 1, 1).unwrap();
        let b = build_index(&ds, &["subject2".into()], 1, 1).unwrap();
        assert_eq!(a, b);
        assert!(WindowLabel::ALL.iter().all(|&l| a.pool(l).iter().all(|w| w.video == 2)));
        assert!(build_index(&ds, &[], 1, 1).is_err());
        assert!(build_index(&ds, &["nobody".into()], 1, 1).is_err());
    }

    #[test]
    fn full_scale_epoch_arithmetic() {
        // about 36,000 onsets over 9 subjects; 7 train; 4 augmentations
        let onsets = 36_000 * 7 / 9;
        let epoch = epoch_size(onsets, 4) as f64;
        assert!((epoch - 448_000.0).abs() < 500.0);
        assert!((epoch - 450_000.0).abs() / 450_000.0 < 0.01);
    }
}
