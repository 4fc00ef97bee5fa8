//! Leave-one-subject-out splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUBJECTS_PER_SPLIT: usize = 9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split_id: usize,
    pub train: Vec<String>,
    pub validation: String,
    pub test: String,
}

/// Split `i` tests on subject `i`, validates on subject `i + 1 (mod 9)` and
/// trains on the remaining seven.
pub fn make_splits(subjects: &[String]) -> Result<Vec<SplitPlan>> {
    if subjects.len() != SUBJECTS_PER_SPLIT {
        return Err(Error::InvalidArgument(format!(
            "need exactly {SUBJECTS_PER_SPLIT} subjects, got {}",
            subjects.len()
        )));
    }
    let mut sorted = subjects.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != subjects.len() {
        return Err(Error::InvalidArgument("subject ids must be distinct".into()));
    }
    let n = subjects.len();
    Ok((0..n)
        .map(|i| {
            let v = (i + 1) % n;
            SplitPlan {
                split_id: i,
                train: (0..n).filter(|&j| j != i && j != v).map(|j| subjects[j].clone()).collect(),
                validation: subjects[v].clone(),
                test: subjects[i].clone(),
            }
        })
        .collect())
}
