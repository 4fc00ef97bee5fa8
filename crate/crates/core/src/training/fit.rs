//! Epoch loop with validation, checkpoints and best-epoch selection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::optimizer::{lr_at, RmsProp};
use super::step::{train_step, StepMetrics, StepParams};
use crate::dataset::{
    build_index, classify_with_flags, BalancedSampler, Dataset, SplitPlan, WindowExtractor,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    decode_onsets, score_predictions, Averaging, DecodeParams, EvalReport, ModelScorer, OnsetPrediction,
    DEFAULT_TOLERANCE_SEC,
};
use crate::model::{save_checkpoint, CheckpointMeta, Model, ModelConfig};
use crate::nn::{weighted_soft_xent, LossSpec};
use crate::rng::substream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Overrides the epoch length derived from the sample index.
    pub batches_per_epoch: Option<usize>,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub l2_lambda: f64,
    pub class_weights: (f64, f64),
    pub grad_clip: Option<f64>,
    pub da_factor: usize,
    pub adjacency: usize,
    pub crop_margin: usize,
    pub max_jitter: f64,
    pub decode: DecodeParams,
    pub tolerance_sec: f64,
    pub averaging: Averaging,
    pub eval_batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 15,
            batches_per_epoch: None,
            base_lr: 1e-3,
            lr_decay: 0.95,
            rho: 0.9,
            epsilon: 1e-8,
            l2_lambda: 1e-4,
            class_weights: (1.0, 1.0),
            grad_clip: None,
            da_factor: 4,
            adjacency: 1,
            crop_margin: 8,
            max_jitter: 4.0,
            decode: DecodeParams::default(),
            tolerance_sec: DEFAULT_TOLERANCE_SEC,
            averaging: Averaging::Micro,
            eval_batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be >= 1".into());
        }
        if !(self.base_lr >= 0.0) || !(self.lr_decay > 0.0) {
            return bad(format!("learning rate {} and decay {} must be non-negative and positive", self.base_lr, self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return bad(format!("rho {} must be in [0, 1) and epsilon {} positive", self.rho, self.epsilon));
        }
        if !(self.l2_lambda >= 0.0) {
            return bad(format!("l2_lambda {} must be >= 0", self.l2_lambda));
        }
        LossSpec::new(self.class_weights.0, self.class_weights.1).map_err(|e| Error::Config(e.to_string()))?;
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if self.da_factor == 0 {
            return bad("da_factor must be >= 1".into());
        }
        if !(self.max_jitter >= 0.0) || self.max_jitter > self.crop_margin as f64 / 2.0 {
            return bad(format!(
                "max_jitter {} must lie in [0, crop_margin / 2 = {}]",
                self.max_jitter,
                self.crop_margin as f64 / 2.0
            ));
        }
        self.decode.validate()?;
        if !(self.tolerance_sec >= 0.0) || self.eval_batch_size == 0 {
            return bad("tolerance must be >= 0 and eval batch size >= 1".into());
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        LossSpec::new(self.class_weights.0, self.class_weights.1)
    }
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_precision,val_recall,val_f";

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_precision, r.val_recall, r.val_f
        )
        .unwrap();
    }
    s
}

pub struct FitResult {
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub best_val_f: f64,
    pub history: Vec<EpochRecord>,
    pub final_model: Model<f32>,
}

/// Validation loss and scores of a model on one subject.
pub struct Validation {
    pub loss: f64,
    pub report: EvalReport,
    pub predictions: Vec<OnsetPrediction>,
}

/// Scores every in-bounds window of `subject`: mean loss against the window
/// targets and decoded onsets against the annotations.
pub fn validate(model: &Model<f32>, dataset: &Dataset, subject: &str, extractor: &WindowExtractor, rois: &[usize], cfg: &TrainConfig) -> Result<Validation> {
    let scorer = ModelScorer {
        model,
        extractor,
        rois: rois.to_vec(),
        batch_size: cfg.eval_batch_size,
    };
    let loss_spec = cfg.loss_spec()?;
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    let mut predictions = Vec::new();
    for &v in &dataset.subject(subject)?.videos {
        let video = dataset.video(v);
        let out = scorer.window_outputs(dataset, v)?;
        let mut curve = vec![0.0; video.duration_frames()];
        for ((&k, &p), l) in out.ref_frames.iter().zip(&out.onset_probs).zip(&out.logits) {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("validation output of {} frame {k}", video.video_id)));
            }
            curve[k] = p as f64;
            logits.extend_from_slice(l);
            targets.extend(classify_with_flags(&video.onset_frames, k, cfg.adjacency).target().map(|t| t as f32));
        }
        predictions.push(OnsetPrediction {
            video_id: video.video_id.clone(),
            onsets: decode_onsets(&curve, video.annotations.fps, cfg.decode),
        });
    }
    let loss = if logits.is_empty() {
        0.0
    } else {
        let n = logits.len() / 2;
        let (l, _) = weighted_soft_xent(&Tensor::from_vec(&[n, 2], logits)?, &Tensor::from_vec(&[n, 2], targets)?, &loss_spec)?;
        l as f64
    };
    let report = score_predictions(dataset, subject, &predictions, "visual 3D CNN", cfg.tolerance_sec, cfg.averaging)?;
    Ok(Validation { loss, report, predictions })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Where [`fit`] writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct FitOutputs {
    /// Receives `epoch_%03d.ckpt` and `best.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Rewritten after every epoch.
    pub history_path: Option<PathBuf>,
}

/// Trains on `split.train`, validates on `split.validation` after every
/// epoch and keeps the epoch with the highest validation f-score (earliest
/// on ties). Test-subject data is never touched.
pub fn fit(
    dataset: &Dataset,
    split: &SplitPlan,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    outputs: &FitOutputs,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    model_config.validate()?;
    let rois = crate::dataset::roi_indices(&model_config.roi_names)?;
    if model_config.channels_in != 3 || model_config.input_frames != crate::dataset::WINDOW_FRAMES {
        return Err(Error::Config(format!(
            "dataset windows are RGB with {} frames; model expects {} channels and {} frames",
            crate::dataset::WINDOW_FRAMES,
            model_config.channels_in,
            model_config.input_frames
        )));
    }
    if let Some(dir) = &outputs.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let extractor = WindowExtractor::new(model_config.roi_pixels, cfg.crop_margin)?;
    let index = build_index(dataset, &split.train, cfg.da_factor, cfg.adjacency)?;
    let sampler = BalancedSampler::new(&index, crate::rng::derive_seed(cfg.seed, "sampler", &[]), cfg.max_jitter)?;
    let batches = cfg.batches_per_epoch.unwrap_or_else(|| sampler.batches_per_epoch());

    let mut model = Model::<f32>::build(model_config, &mut substream(cfg.seed, "init", &[]))?;
    let mut optimizer = RmsProp::new(&model.parameters(), cfg.rho, cfg.epsilon)?;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(Model<f32>, usize, f64)> = None;

    for epoch in 0..cfg.max_epochs {
        let step_params = StepParams {
            loss: cfg.loss_spec()?,
            l2_lambda: cfg.l2_lambda,
            lr: lr_at(epoch, cfg.base_lr, cfg.lr_decay),
            grad_clip: cfg.grad_clip,
        };
        let mut loss_sum = 0.0;
        for b in 0..batches {
            let plan = sampler.batch(epoch, b);
            let batch = dataset.materialize(&plan.samples, &extractor, &rois)?;
            let mut rng = substream(cfg.seed, "dropout", &[epoch as u64, b as u64]);
            let m: StepMetrics = train_step(&mut model, &batch, &plan.targets(), &mut optimizer, &step_params, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}")),
                    other => other,
                })?;
            loss_sum += m.loss;
        }
        let val = validate(&model, dataset, &split.validation, &extractor, &rois, cfg)?;
        let scores = val.report.aggregate();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss: val.loss,
            val_precision: scores.precision,
            val_recall: scores.recall,
            val_f: scores.f,
        };
        history.push(record);
        on_epoch(&record);

        let meta = CheckpointMeta { epoch, val_f: scores.f };
        let improved = best.as_ref().is_none_or(|b| scores.f > b.2);
        if improved {
            best = Some((model.clone(), epoch, scores.f));
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            save_checkpoint(&model, &dir.join(format!("epoch_{epoch:03}.ckpt")), &meta)?;
            if improved {
                save_checkpoint(&model, &dir.join("best.ckpt"), &meta)?;
            }
        }
        if let Some(path) = &outputs.history_path {
            write_file(path, history_csv(&history).as_bytes())?;
        }
    }
    let (best, best_epoch, best_val_f) = best.expect("at least one epoch");
    Ok(FitResult {
        best,
        best_epoch,
        best_val_f,
        history,
        final_model: model,
    })
}
