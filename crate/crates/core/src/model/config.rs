use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// The four annotated regions of interest, in canonical order.
pub const ROI_NAMES: [&str; 4] = ["mouth", "left_hand", "right_hand", "clarinet_tip"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Normal with std `sqrt(2 / fan_in)`.
    HeNormal,
    /// Normal with std `sqrt(2 / (fan_in + fan_out))`.
    XavierNormal,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::HeNormal => "he",
            InitScheme::XavierNormal => "xavier",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(InitScheme::HeNormal),
            "xavier" => Ok(InitScheme::XavierNormal),
            _ => Err(Error::Config(format!("unknown init scheme {s:?} (expected he or xavier)"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub roi_names: Vec<String>,
    pub input_frames: usize,
    /// `(height, width)` of each resampled ROI.
    pub roi_pixels: (usize, usize),
    pub channels_in: usize,
    pub conv_channels: Vec<usize>,
    pub temporal_kernels: Vec<usize>,
    /// Square, odd spatial kernels; padding is `k / 2` so extents are kept.
    pub spatial_kernels: Vec<usize>,
    /// 1-based indices of conv layers followed by 2x2 spatial max pooling.
    pub pool_after: Vec<usize>,
    pub fc1_width: usize,
    pub fc2_width: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            roi_names: ROI_NAMES.iter().map(|s| s.to_string()).collect(),
            input_frames: 9,
            roi_pixels: (64, 64),
            channels_in: 3,
            conv_channels: vec![16, 32, 32, 64, 64],
            temporal_kernels: vec![3, 3, 3, 3, 1],
            spatial_kernels: vec![3; 5],
            pool_after: vec![1, 2, 3],
            fc1_width: 128,
            fc2_width: 256,
            dropout_rate: 0.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            init: InitScheme::HeNormal,
        }
    }
}

/// Shapes of one conv layer, per sample (`(channels, t, h, w)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerShape {
    pub input: (usize, usize, usize, usize),
    pub conv_out: (usize, usize, usize, usize),
    pub pooled: bool,
    pub output: (usize, usize, usize, usize),
}

/// The validated per-layer shape trace of a stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub conv: Vec<ConvLayerShape>,
    /// Width of the flattened conv output feeding FC1.
    pub flat_features: usize,
}

pub const POOL_WINDOW: (usize, usize) = (2, 2);

impl ModelConfig {
    pub fn num_streams(&self) -> usize {
        self.roi_names.len()
    }

    pub fn num_conv_layers(&self) -> usize {
        self.conv_channels.len()
    }

    /// Temporal extent before the first layer and after each conv layer.
    /// Entries go negative for schedules that overrun the input.
    pub fn temporal_extents(&self) -> Vec<i64> {
        let mut t = self.input_frames as i64;
        let mut out = vec![t];
        for &k in &self.temporal_kernels {
            t -= k as i64 - 1;
            out.push(t);
        }
        out
    }

    /// Checks every invariant and returns the shape trace.
    pub fn validate(&self) -> Result<LayerPlan> {
        let bad = |m: String| Err(Error::Config(m));
        if self.roi_names.is_empty() {
            return bad("model.roi_names must not be empty".into());
        }
        for (i, n) in self.roi_names.iter().enumerate() {
            if n.is_empty() || n.contains(',') || n.contains(char::is_whitespace) {
                return bad(format!("invalid ROI name {n:?}"));
            }
            if self.roi_names[..i].contains(n) {
                return bad(format!("duplicate ROI name {n:?}"));
            }
        }
        let layers = self.conv_channels.len();
        if layers == 0 || self.temporal_kernels.len() != layers || self.spatial_kernels.len() != layers {
            return bad(format!(
                "conv_channels, temporal_kernels and spatial_kernels need equal nonzero lengths, got {}, {}, {}",
                layers,
                self.temporal_kernels.len(),
                self.spatial_kernels.len()
            ));
        }
        if self.input_frames == 0 || self.channels_in == 0 || self.roi_pixels.0 == 0 || self.roi_pixels.1 == 0 {
            return bad("input_frames, channels_in and roi_pixels must be positive".into());
        }
        if self.conv_channels.contains(&0) || self.temporal_kernels.contains(&0) {
            return bad("conv channel counts and temporal kernels must be positive".into());
        }
        if let Some(k) = self.spatial_kernels.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("spatial kernels must be odd, got {k}"));
        }
        if let Some(p) = self.pool_after.iter().find(|&&p| p == 0 || p > layers) {
            return bad(format!("pool_after index {p} outside 1..={layers}"));
        }
        let extents = self.temporal_extents();
        if *extents.last().unwrap() != 1 || extents.iter().any(|&t| t < 1) {
            return bad(format!(
                "temporal kernels {:?} on {} frames give per-layer extents {:?}; the last must be exactly 1",
                self.temporal_kernels, self.input_frames, extents
            ));
        }
        if self.fc1_width == 0 || self.fc2_width == 0 {
            return bad("fc widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || self.bn_epsilon <= 0.0 {
            return bad(format!(
                "bn_momentum {} must be in (0, 1) and bn_epsilon {} positive",
                self.bn_momentum, self.bn_epsilon
            ));
        }

        let (mut c, mut t, mut h, mut w) = (self.channels_in, self.input_frames, self.roi_pixels.0, self.roi_pixels.1);
        let mut conv = Vec::with_capacity(layers);
        for i in 0..layers {
            let input = (c, t, h, w);
            c = self.conv_channels[i];
            t = extents[i + 1] as usize;
            let conv_out = (c, t, h, w);
            let pooled = self.pool_after.contains(&(i + 1));
            if pooled {
                if h % POOL_WINDOW.0 != 0 || w % POOL_WINDOW.1 != 0 {
                    return bad(format!(
                        "layer {} output {h}x{w} is not divisible by the {}x{} pooling window",
                        i + 1,
                        POOL_WINDOW.0,
                        POOL_WINDOW.1
                    ));
                }
                h /= POOL_WINDOW.0;
                w /= POOL_WINDOW.1;
            }
            conv.push(ConvLayerShape {
                input,
                conv_out,
                pooled,
                output: (c, t, h, w),
            });
        }
        Ok(LayerPlan {
            conv,
            flat_features: c * t * h * w,
        })
    }

    /// Number of trainable scalars, from the configuration alone.
    pub fn parameter_count(&self) -> Result<usize> {
        let plan = self.validate()?;
        let per_stream: usize = plan
            .conv
            .iter()
            .zip(self.temporal_kernels.iter().zip(&self.spatial_kernels))
            .map(|(l, (&kt, &ks))| l.conv_out.0 * l.input.0 * kt * ks * ks + l.conv_out.0)
            .sum::<usize>()
            + plan.flat_features * self.fc1_width
            + self.fc1_width;
        Ok(self.num_streams() * per_stream
            + self.num_streams() * self.fc1_width * self.fc2_width
            + self.fc2_width
            + self.fc2_width * 2)
    }

    /// Flat `model.*` key/value pairs, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("model.roi_names".into(), self.roi_names.join(",")),
            ("model.input_frames".into(), self.input_frames.to_string()),
            ("model.roi_height".into(), self.roi_pixels.0.to_string()),
            ("model.roi_width".into(), self.roi_pixels.1.to_string()),
            ("model.channels_in".into(), self.channels_in.to_string()),
            ("model.conv_channels".into(), list(&self.conv_channels)),
            ("model.temporal_kernels".into(), list(&self.temporal_kernels)),
            ("model.spatial_kernels".into(), list(&self.spatial_kernels)),
            ("model.pool_after".into(), list(&self.pool_after)),
            ("model.fc1_width".into(), self.fc1_width.to_string()),
            ("model.fc2_width".into(), self.fc2_width.to_string()),
            ("model.dropout_rate".into(), self.dropout_rate.to_string()),
            ("model.bn_epsilon".into(), self.bn_epsilon.to_string()),
            ("model.bn_momentum".into(), self.bn_momentum.to_string()),
            ("model.init".into(), self.init.as_str().into()),
        ]
    }

    /// Canonical text form: one `key=value` line per field.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Reads every `model.*` key from `kv`; keys absent from the map keep
    /// their defaults. Does not validate.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (key, value) in kv.iter().filter(|(k, _)| k.starts_with("model.")) {
            let v = value.as_str();
            match key.as_str() {
                "model.roi_names" => cfg.roi_names = parse_list(key, v, |s| Ok(s.to_string()))?,
                "model.input_frames" => cfg.input_frames = parse_num(key, v)?,
                "model.roi_height" => cfg.roi_pixels.0 = parse_num(key, v)?,
                "model.roi_width" => cfg.roi_pixels.1 = parse_num(key, v)?,
                "model.channels_in" => cfg.channels_in = parse_num(key, v)?,
                "model.conv_channels" => cfg.conv_channels = parse_list(key, v, |s| parse_num(key, s))?,
                "model.temporal_kernels" => cfg.temporal_kernels = parse_list(key, v, |s| parse_num(key, s))?,
                "model.spatial_kernels" => cfg.spatial_kernels = parse_list(key, v, |s| parse_num(key, s))?,
                "model.pool_after" => cfg.pool_after = parse_list(key, v, |s| parse_num(key, s))?,
                "model.fc1_width" => cfg.fc1_width = parse_num(key, v)?,
                "model.fc2_width" => cfg.fc2_width = parse_num(key, v)?,
                "model.dropout_rate" => cfg.dropout_rate = parse_num(key, v)?,
                "model.bn_epsilon" => cfg.bn_epsilon = parse_num(key, v)?,
                "model.bn_momentum" => cfg.bn_momentum = parse_num(key, v)?,
                "model.init" => cfg.init = InitScheme::parse(v)?,
                _ => return Err(Error::Config(format!("unknown key {key}"))),
            }
        }
        Ok(cfg)
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

pub(crate) fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| f(s.trim()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("{key}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_temporal_trace() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.temporal_extents(), vec![9, 7, 5, 3, 1, 1]);
        let plan = cfg.validate().unwrap();
        let ts: Vec<usize> = plan.conv.iter().map(|l| l.output.1).collect();
        assert_eq!(ts, vec![7, 5, 3, 1, 1]);
        // 64 -> 32 -> 16 -> 8 after pooling at layers 1..3
        assert_eq!(plan.conv[4].output, (64, 1, 8, 8));
        assert_eq!(plan.flat_features, 64 * 8 * 8);
    }

    #[test]
    fn overrunning_schedule_is_rejected_with_extents() {
        let cfg = ModelConfig {
            temporal_kernels: vec![3, 3, 3, 3, 3],
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("[9, 7, 5, 3, 1, -1]"), "{err}");
    }

    #[test]
    fn schedule_ending_above_one_is_rejected() {
        let cfg = ModelConfig {
            temporal_kernels: vec![3, 3, 3, 1, 1],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            roi_names: vec!["mouth".into(), "right_hand".into()],
            dropout_rate: 0.25,
            init: InitScheme::XavierNormal,
            ..ModelConfig::default()
        };
        let kv: BTreeMap<_, _> = cfg.to_kv().into_iter().collect();
        assert_eq!(ModelConfig::from_kv(&kv).unwrap(), cfg);
    }
}
