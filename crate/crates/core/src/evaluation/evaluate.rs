//! Scoring a detector over a subject's videos.

use super::decode::{decode_onsets, DecodeParams};
use super::matching::match_onsets;
use super::predictions::OnsetPrediction;
use super::report::{Averaging, EvalReport, VideoScore};
use crate::dataset::{Dataset, WindowExtractor, WindowRef};
use crate::error::{Error, Result};
use crate::model::Model;

/// Anything that assigns an onset probability to every frame of a video.
pub trait FrameScorer {
    fn frame_probabilities(&self, dataset: &Dataset, video: usize) -> Result<Vec<f64>>;
}

/// Eval-mode logits of every in-bounds window of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutputs {
    pub ref_frames: Vec<usize>,
    pub logits: Vec<[f32; 2]>,
    pub onset_probs: Vec<f32>,
}

/// Runs a model over every in-bounds window with zero jitter.
pub struct ModelScorer<'a> {
    pub model: &'a Model<f32>,
    pub extractor: &'a WindowExtractor,
    pub rois: Vec<usize>,
    pub batch_size: usize,
}

impl ModelScorer<'_> {
    pub fn window_outputs(&self, dataset: &Dataset, video: usize) -> Result<WindowOutputs> {
        let ref_frames: Vec<usize> = dataset.video(video).window_range().collect();
        let mut logits = Vec::with_capacity(ref_frames.len());
        let mut onset_probs = Vec::with_capacity(ref_frames.len());
        for chunk in ref_frames.chunks(self.batch_size.max(1)) {
            let windows: Vec<(WindowRef, (f64, f64))> = chunk
                .iter()
                .map(|&k| (WindowRef { video, ref_frame: k }, (0.0, 0.0)))
                .collect();
            let batch = dataset.materialize_windows(&windows, self.extractor, &self.rois)?;
            let out = self.model.infer(&batch)?;
            for (l, p) in out.logits.data().chunks(2).zip(out.probs.data().chunks(2)) {
                logits.push([l[0], l[1]]);
                onset_probs.push(p[1]);
            }
        }
        Ok(WindowOutputs {
            ref_frames,
            logits,
            onset_probs,
        })
    }
}

impl FrameScorer for ModelScorer<'_> {
    fn frame_probabilities(&self, dataset: &Dataset, video: usize) -> Result<Vec<f64>> {
        let out = self.window_outputs(dataset, video)?;
        let mut curve = vec![0.0; dataset.video(video).duration_frames()];
        for (&k, &p) in out.ref_frames.iter().zip(&out.onset_probs) {
            curve[k] = p as f64;
        }
        Ok(curve)
    }
}

fn check_finite(curve: &[f64], video_id: &str) -> Result<()> {
    match curve.iter().position(|p| !p.is_finite()) {
        Some(k) => Err(Error::NonFinite(format!("onset probability of {video_id} frame {k}"))),
        None => Ok(()),
    }
}

/// Decodes every video of `subject` and scores it against the annotations.
pub fn evaluate_scorer(
    scorer: &dyn FrameScorer,
    dataset: &Dataset,
    subject: &str,
    method: &str,
    decode: DecodeParams,
    tolerance_sec: f64,
    averaging: Averaging,
) -> Result<(EvalReport, Vec<OnsetPrediction>)> {
    let videos = dataset.subject(subject)?.videos.clone();
    let mut predictions = Vec::with_capacity(videos.len());
    for v in videos {
        let video = dataset.video(v);
        let curve = scorer.frame_probabilities(dataset, v)?;
        check_finite(&curve, &video.video_id)?;
        predictions.push(OnsetPrediction {
            video_id: video.video_id.clone(),
            onsets: decode_onsets(&curve, video.annotations.fps, decode),
        });
    }
    let report = score_predictions(dataset, subject, &predictions, method, tolerance_sec, averaging)?;
    Ok((report, predictions))
}

/// Eval-mode model scoring of one subject.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    model: &Model<f32>,
    dataset: &Dataset,
    subject: &str,
    extractor: &WindowExtractor,
    rois: &[usize],
    decode: DecodeParams,
    tolerance_sec: f64,
    averaging: Averaging,
) -> Result<(EvalReport, Vec<OnsetPrediction>)> {
    let scorer = ModelScorer {
        model,
        extractor,
        rois: rois.to_vec(),
        batch_size: 64,
    };
    evaluate_scorer(&scorer, dataset, subject, "visual 3D CNN", decode, tolerance_sec, averaging)
}

/// Scores externally produced predictions; videos of the subject without an
/// entry count as empty predictions.
pub fn score_predictions(
    dataset: &Dataset,
    subject: &str,
    predictions: &[OnsetPrediction],
    method: &str,
    tolerance_sec: f64,
    averaging: Averaging,
) -> Result<EvalReport> {
    let subj = dataset.subject(subject)?;
    let known: Vec<&str> = subj.videos.iter().map(|&v| dataset.video(v).video_id.as_str()).collect();
    if let Some(p) = predictions.iter().find(|p| !known.contains(&p.video_id.as_str())) {
        return Err(Error::Dataset(format!(
            "prediction for video {:?} which is not part of subject {subject:?}",
            p.video_id
        )));
    }
    let mut videos = Vec::with_capacity(subj.videos.len());
    for &v in &subj.videos {
        let video = dataset.video(v);
        let pred = predictions
            .iter()
            .find(|p| p.video_id == video.video_id)
            .map_or(&[][..], |p| p.onsets.as_slice());
        let truth = &video.annotations.onsets;
        let m = match_onsets(pred, truth, tolerance_sec)?;
        videos.push(VideoScore {
            video_id: video.video_id.clone(),
            counts: m.counts,
            truth_onsets: truth.len(),
        });
    }
    Ok(EvalReport {
        method: method.to_string(),
        subject: subject.to_string(),
        tolerance_sec,
        averaging,
        videos,
    })
}
