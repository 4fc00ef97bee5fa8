//! Flat `key = value` run configuration.
//!
//! Every tunable of the pipeline has a dotted key (`model.*`, `data.*`,
//! `synth.*`, `train.*`, `eval.*`) plus `seed` and the data/output paths.
//! Layers are applied in order: defaults, then a config file, then
//! individual overrides. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::SynthSpec;
use crate::error::{Error, Result};
use crate::evaluation::Averaging;
use crate::model::config::{parse_list, parse_num};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset manifest; empty when unset.
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub split: usize,
    /// Decoded videos kept in memory; 0 keeps all.
    pub cache_videos: usize,
    pub baseline_trials: usize,
    pub model: ModelConfig,
    pub synth: SynthSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            manifest: PathBuf::new(),
            out_dir: PathBuf::from("runs"),
            split: 0,
            cache_videos: 0,
            baseline_trials: 1000,
            model: ModelConfig::default(),
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Description of every key, in the order they are listed.
pub const KEY_HELP: &[(&str, &str)] = &[
    ("seed", "root seed; every random consumer derives its own substream"),
    ("data.manifest", "dataset manifest JSON"),
    ("out", "output directory"),
    ("data.da_factor", "crop augmentations per onset window and epoch"),
    ("data.adjacency", "frames around an onset frame labeled near-onset"),
    ("data.crop_margin", "extra pixels resampled around each ROI before cropping"),
    ("data.max_jitter", "largest crop offset in pixels (at most crop_margin / 2)"),
    ("data.cache_videos", "decoded videos kept in memory (0 = all)"),
    ("model.roi_names", "ROI streams, comma separated"),
    ("model.input_frames", "frames per window"),
    ("model.roi_height", "resampled ROI height"),
    ("model.roi_width", "resampled ROI width"),
    ("model.channels_in", "input channels"),
    ("model.conv_channels", "filters of CONV1..CONV5"),
    ("model.temporal_kernels", "temporal kernel extent per conv layer"),
    ("model.spatial_kernels", "odd spatial kernel size per conv layer"),
    ("model.pool_after", "1-based conv layers followed by 2x2 max pooling"),
    ("model.fc1_width", "per-stream FC1 width"),
    ("model.fc2_width", "FC2 width"),
    ("model.dropout_rate", "dropout after FC1 and FC2"),
    ("model.bn_epsilon", "batch-norm epsilon"),
    ("model.bn_momentum", "batch-norm running-average momentum"),
    ("model.init", "weight init: he or xavier"),
    ("synth.subjects", "synthetic subjects"),
    ("synth.videos_per_subject", "synthetic videos per subject"),
    ("synth.fps", "synthetic frame rate"),
    ("synth.duration_sec", "synthetic video length in seconds"),
    ("synth.width", "synthetic frame width"),
    ("synth.height", "synthetic frame height"),
    ("synth.mean_gap_frames", "mean frames between onsets"),
    ("synth.min_gap_frames", "minimum frames between onsets"),
    ("synth.roi_size", "synthetic ROI box side in pixels"),
    ("synth.cue_rois", "ROIs showing the onset cue"),
    ("synth.cue_strength", "cue blend factor in [0, 1]"),
    ("synth.noise", "pixel noise amplitude in 8-bit levels"),
    ("synth.drift_px", "ROI drift amplitude in pixels"),
    ("synth.rotation_deg", "ROI rotation amplitude in degrees"),
    ("train.split", "leave-one-subject-out split to train"),
    ("train.max_epochs", "epoch budget"),
    ("train.batches_per_epoch", "batches per epoch (0 = 4 * onsets * da_factor / 24)"),
    ("train.base_lr", "initial learning rate"),
    ("train.lr_decay", "learning-rate factor per epoch"),
    ("train.rho", "RMSprop decay"),
    ("train.epsilon", "RMSprop epsilon"),
    ("train.l2_lambda", "L2 factor on weights"),
    ("train.class_weights", "loss weights for not-an-onset,onset"),
    ("train.grad_clip", "global gradient-norm clip (0 = off)"),
    ("eval.threshold", "onset probability threshold for decoding"),
    ("eval.nms_radius", "frames suppressed around each decoded onset"),
    ("eval.tolerance", "matching tolerance in seconds"),
    ("eval.averaging", "micro or macro averaging over videos"),
    ("eval.batch_size", "windows per inference batch"),
    ("eval.baseline_trials", "informed random baseline trials"),
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    parse_num(key, v)
}

impl RunConfig {
    /// Current values of every key, in [`KEY_HELP`] order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let s = &self.synth;
        let model: BTreeMap<String, String> = self.model.to_kv().into_iter().collect();
        KEY_HELP
            .iter()
            .map(|(k, _)| {
                let v = match *k {
                    "seed" => self.seed.to_string(),
                    "data.manifest" => self.manifest.display().to_string(),
                    "out" => self.out_dir.display().to_string(),
                    "data.da_factor" => t.da_factor.to_string(),
                    "data.adjacency" => t.adjacency.to_string(),
                    "data.crop_margin" => t.crop_margin.to_string(),
                    "data.max_jitter" => t.max_jitter.to_string(),
                    "data.cache_videos" => self.cache_videos.to_string(),
                    "synth.subjects" => s.subjects.to_string(),
                    "synth.videos_per_subject" => s.videos_per_subject.to_string(),
                    "synth.fps" => s.fps.to_string(),
                    "synth.duration_sec" => s.duration_sec.to_string(),
                    "synth.width" => s.width.to_string(),
                    "synth.height" => s.height.to_string(),
                    "synth.mean_gap_frames" => s.mean_gap_frames.to_string(),
                    "synth.min_gap_frames" => s.min_gap_frames.to_string(),
                    "synth.roi_size" => s.roi_size.to_string(),
                    "synth.cue_rois" => s.cue_rois.join(","),
                    "synth.cue_strength" => s.cue_strength.to_string(),
                    "synth.noise" => s.noise.to_string(),
                    "synth.drift_px" => s.drift_px.to_string(),
                    "synth.rotation_deg" => s.rotation_deg.to_string(),
                    "train.split" => self.split.to_string(),
                    "train.max_epochs" => t.max_epochs.to_string(),
                    "train.batches_per_epoch" => t.batches_per_epoch.unwrap_or(0).to_string(),
                    "train.base_lr" => t.base_lr.to_string(),
                    "train.lr_decay" => t.lr_decay.to_string(),
                    "train.rho" => t.rho.to_string(),
                    "train.epsilon" => t.epsilon.to_string(),
                    "train.l2_lambda" => t.l2_lambda.to_string(),
                    "train.class_weights" => format!("{},{}", t.class_weights.0, t.class_weights.1),
                    "train.grad_clip" => t.grad_clip.unwrap_or(0.0).to_string(),
                    "eval.threshold" => t.decode.threshold.to_string(),
                    "eval.nms_radius" => t.decode.nms_radius_frames.to_string(),
                    "eval.tolerance" => t.tolerance_sec.to_string(),
                    "eval.averaging" => t.averaging.as_str().to_string(),
                    "eval.batch_size" => t.eval_batch_size.to_string(),
                    "eval.baseline_trials" => self.baseline_trials.to_string(),
                    other => model.get(other).cloned().expect("every key has a value"),
                };
                (k.to_string(), v)
            })
            .collect()
    }

    /// Sets one key without cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = num(key, v)?,
            "data.manifest" => self.manifest = PathBuf::from(v),
            "out" => self.out_dir = PathBuf::from(v),
            "data.da_factor" => t.da_factor = num(key, v)?,
            "data.adjacency" => t.adjacency = num(key, v)?,
            "data.crop_margin" => t.crop_margin = num(key, v)?,
            "data.max_jitter" => t.max_jitter = num(key, v)?,
            "data.cache_videos" => self.cache_videos = num(key, v)?,
            "synth.subjects" => s.subjects = num(key, v)?,
            "synth.videos_per_subject" => s.videos_per_subject = num(key, v)?,
            "synth.fps" => s.fps = num(key, v)?,
            "synth.duration_sec" => s.duration_sec = num(key, v)?,
            "synth.width" => s.width = num(key, v)?,
            "synth.height" => s.height = num(key, v)?,
            "synth.mean_gap_frames" => s.mean_gap_frames = num(key, v)?,
            "synth.min_gap_frames" => s.min_gap_frames = num(key, v)?,
            "synth.roi_size" => s.roi_size = num(key, v)?,
            "synth.cue_rois" => s.cue_rois = parse_list(key, v, |x| Ok(x.to_string()))?,
            "synth.cue_strength" => s.cue_strength = num(key, v)?,
            "synth.noise" => s.noise = num(key, v)?,
            "synth.drift_px" => s.drift_px = num(key, v)?,
            "synth.rotation_deg" => s.rotation_deg = num(key, v)?,
            "train.split" => self.split = num(key, v)?,
            "train.max_epochs" => t.max_epochs = num(key, v)?,
            "train.batches_per_epoch" => {
                let n: usize = num(key, v)?;
                t.batches_per_epoch = (n > 0).then_some(n);
            }
            "train.base_lr" => t.base_lr = num(key, v)?,
            "train.lr_decay" => t.lr_decay = num(key, v)?,
            "train.rho" => t.rho = num(key, v)?,
            "train.epsilon" => t.epsilon = num(key, v)?,
            "train.l2_lambda" => t.l2_lambda = num(key, v)?,
            "train.class_weights" => {
                let w: Vec<f64> = parse_list(key, v, |x| num(key, x))?;
                if w.len() != 2 {
                    return Err(Error::Config(format!("{key}: expected two weights, got {v:?}")));
                }
                t.class_weights = (w[0], w[1]);
            }
            "train.grad_clip" => {
                let c: f64 = num(key, v)?;
                t.grad_clip = (c != 0.0).then_some(c);
            }
            "eval.threshold" => t.decode.threshold = num(key, v)?,
            "eval.nms_radius" => t.decode.nms_radius_frames = num(key, v)?,
            "eval.tolerance" => t.tolerance_sec = num(key, v)?,
            "eval.averaging" => t.averaging = Averaging::parse(v)?,
            "eval.batch_size" => t.eval_batch_size = num(key, v)?,
            "eval.baseline_trials" => self.baseline_trials = num(key, v)?,
            k if k.starts_with("model.") => {
                let mut kv = BTreeMap::new();
                kv.insert(k.to_string(), v.to_string());
                let parsed = ModelConfig::from_kv(&kv)?;
                let m = &mut self.model;
                match k {
                    "model.roi_names" => m.roi_names = parsed.roi_names,
                    "model.input_frames" => m.input_frames = parsed.input_frames,
                    "model.roi_height" => m.roi_pixels.0 = parsed.roi_pixels.0,
                    "model.roi_width" => m.roi_pixels.1 = parsed.roi_pixels.1,
                    "model.channels_in" => m.channels_in = parsed.channels_in,
                    "model.conv_channels" => m.conv_channels = parsed.conv_channels,
                    "model.temporal_kernels" => m.temporal_kernels = parsed.temporal_kernels,
                    "model.spatial_kernels" => m.spatial_kernels = parsed.spatial_kernels,
                    "model.pool_after" => m.pool_after = parsed.pool_after,
                    "model.fc1_width" => m.fc1_width = parsed.fc1_width,
                    "model.fc2_width" => m.fc2_width = parsed.fc2_width,
                    "model.dropout_rate" => m.dropout_rate = parsed.dropout_rate,
                    "model.bn_epsilon" => m.bn_epsilon = parsed.bn_epsilon,
                    "model.bn_momentum" => m.bn_momentum = parsed.bn_momentum,
                    "model.init" => m.init = parsed.init,
                    _ => unreachable!("from_kv rejects unknown model keys"),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        if key == "seed" {
            self.train.seed = self.seed;
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected key = value", i + 1)))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(Error::Config(format!("{source}:{}: {k} already set on line {prev}", i + 1)));
            }
            self.set(k, v).map_err(|e| Error::Config(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, then `file`, then `overrides` (`key=value`), then validation.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.model.validate().map_err(cfg_err)?;
        crate::dataset::roi_indices(&self.model.roi_names)?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.split >= crate::dataset::SUBJECTS_PER_SPLIT {
            return Err(Error::Config(format!("train.split {} must be below 9", self.split)));
        }
        if self.baseline_trials == 0 {
            return Err(Error::Config("eval.baseline_trials must be >= 1".into()));
        }
        Ok(())
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Help listing of every key with its default.
    pub fn help_text() -> String {
        let mut s = String::from("Configuration keys (default):\n");
        for ((k, desc), (_, v)) in KEY_HELP.iter().zip(RunConfig::default().to_kv()) {
            writeln!(s, "  {k:<28} {desc} [{v}]").unwrap();
        }
        s
    }
}
