//! Prediction interchange files (`video_id,onset_sec`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OnsetPrediction {
    pub video_id: String,
    /// Strictly increasing times in seconds.
    pub onsets: Vec<f64>,
}

pub fn write_predictions(path: &Path, predictions: &[OnsetPrediction]) -> Result<()> {
    let mut text = String::from("video_id,onset_sec\n");
    for p in predictions {
        for t in &p.onsets {
            writeln!(text, "{},{t}", p.video_id).unwrap();
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads predictions grouped by video, in order of first appearance. Videos
/// without predicted onsets are simply absent.
pub fn read_predictions(path: &Path) -> Result<Vec<OnsetPrediction>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["video_id", "onset_sec"] {
        return Err(Error::Dataset(format!("{}: header must be video_id,onset_sec", path.display())));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_video: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |msg: String| Error::Annotation {
            video_id: path.display().to_string(),
            line,
            message: msg,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let (vid, t) = match (rec.get(0), rec.get(1)) {
            (Some(v), Some(t)) => (v.to_string(), t),
            _ => return Err(bad("expected two fields".into())),
        };
        let t: f64 = t.parse().map_err(|_| bad(format!("onset_sec {t:?} is not a number")))?;
        let list = by_video.entry(vid.clone()).or_insert_with(|| {
            order.push(vid.clone());
            Vec::new()
        });
        if let Some(&prev) = list.last() {
            if t <= prev {
                return Err(Error::Annotation {
                    video_id: vid,
                    line,
                    message: format!("onset {t} does not follow {prev}"),
                });
            }
        }
        list.push(t);
    }
    Ok(order
        .into_iter()
        .map(|v| {
            let onsets = by_video.remove(&v).unwrap();
            OnsetPrediction { video_id: v, onsets }
        })
        .collect())
}
