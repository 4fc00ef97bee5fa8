//! Reproducible synthetic datasets in the on-disk annotation format.
//!
//! Each subject gets its own palette and ROI layout. ROI boxes drift and
//! rotate smoothly; the designated cue ROIs show a bright disc on exactly the
//! frames that contain an onset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::annotations::{Manifest, ManifestSubject, ManifestVideo};
use super::{onset_frame_flags, roi_indices, OrientedBox, POST_FRAMES, PRE_FRAMES};
use crate::error::{Error, Result};
use crate::model::ROI_NAMES;
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects: usize,
    pub videos_per_subject: usize,
    pub fps: f64,
    pub duration_sec: f64,
    pub width: usize,
    pub height: usize,
    /// Mean distance between consecutive onset frames.
    pub mean_gap_frames: f64,
    pub min_gap_frames: usize,
    /// Side of the ROI boxes in pixels.
    pub roi_size: f64,
    pub cue_rois: Vec<String>,
    /// Blend factor of the cue disc towards its bright color, in `[0, 1]`.
    pub cue_strength: f64,
    /// Amplitude of per-pixel noise in 8-bit levels.
    pub noise: f64,
    pub drift_px: f64,
    pub rotation_deg: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: 9,
            videos_per_subject: 2,
            fps: 30.0,
            duration_sec: 20.0,
            width: 80,
            height: 64,
            mean_gap_frames: 15.0,
            min_gap_frames: 4,
            roi_size: 20.0,
            cue_rois: vec!["mouth".into(), "right_hand".into()],
            cue_strength: 0.8,
            noise: 8.0,
            drift_px: 3.0,
            rotation_deg: 10.0,
        }
    }
}

impl SynthSpec {
    pub fn duration_frames(&self) -> usize {
        (self.duration_sec * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let frames = self.duration_frames();
        if self.subjects == 0 || self.videos_per_subject == 0 {
            return Err(Error::Config("synthetic dataset needs subjects and videos".into()));
        }
        if !(self.fps > 0.0) || frames < PRE_FRAMES + POST_FRAMES + 1 {
            return Err(Error::Config(format!("synthetic video of {frames} frames is too short")));
        }
        if self.width < 8 || self.height < 8 || !(self.roi_size > 0.0) {
            return Err(Error::Config("synthetic frame and ROI sizes must be positive".into()));
        }
        if self.min_gap_frames == 0 || self.mean_gap_frames < self.min_gap_frames as f64 {
            return Err(Error::Config(format!(
                "mean gap {} must be at least min gap {} >= 1",
                self.mean_gap_frames, self.min_gap_frames
            )));
        }
        if !(0.0..=1.0).contains(&self.cue_strength) || !(self.noise >= 0.0) {
            return Err(Error::Config("cue_strength must be in [0, 1] and noise >= 0".into()));
        }
        roi_indices(&self.cue_rois)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub videos: usize,
    pub onsets: usize,
}

/// Onset times of one video; onset frames lie in `[5, duration - 3)`.
pub fn plan_onsets(spec: &SynthSpec, seed: u64, subject: usize, video: usize) -> Vec<f64> {
    let frames = spec.duration_frames();
    let mut rng = substream(seed, "synth.onsets", &[subject as u64, video as u64]);
    let extra = spec.mean_gap_frames - spec.min_gap_frames as f64;
    let geo = Geometric::new(1.0 / (extra + 1.0)).expect("valid probability");
    let mut onsets = Vec::new();
    let mut k = PRE_FRAMES as u64 + geo.sample(&mut rng);
    while (k as usize) + POST_FRAMES < frames {
        let u: f64 = rng.random_range(0.05..0.95);
        onsets.push((k as f64 + u) / spec.fps);
        k += spec.min_gap_frames as u64 + geo.sample(&mut rng);
    }
    onsets
}

struct Appearance {
    background: [f64; 3],
    gradient: [f64; 2],
    roi_colors: [[f64; 3]; 4],
    anchors: [(f64, f64); 4],
    cue_color: [f64; 3],
}

fn appearance(spec: &SynthSpec, seed: u64, subject: usize) -> Appearance {
    let mut rng = substream(seed, "synth.subject", &[subject as u64]);
    let mut color = |lo: f64, hi: f64| [0; 3].map(|_: u8| rng.random_range(lo..hi));
    let background = color(30.0, 120.0);
    let roi_colors = [color(60.0, 170.0), color(60.0, 170.0), color(60.0, 170.0), color(60.0, 170.0)];
    let cue_color = [250.0, 250.0, 200.0 + 50.0 * (subject % 2) as f64];
    let (w, h) = (spec.width as f64, spec.height as f64);
    let layout = [(0.5, 0.28), (0.28, 0.66), (0.72, 0.66), (0.5, 0.86)];
    let mut anchors = [(0.0, 0.0); 4];
    for (a, &(fx, fy)) in anchors.iter_mut().zip(&layout) {
        *a = (fx * w + rng.random_range(-3.0..3.0), fy * h + rng.random_range(-3.0..3.0));
    }
    let gradient = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
    Appearance {
        background,
        gradient,
        roi_colors,
        anchors,
        cue_color,
    }
}

fn roi_tracks(spec: &SynthSpec, app: &Appearance, seed: u64, subject: usize, video: usize) -> Vec<[OrientedBox; 4]> {
    let mut rng = substream(seed, "synth.tracks", &[subject as u64, video as u64]);
    let params: Vec<[f64; 6]> = (0..4)
        .map(|_| {
            [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.05..0.25),
                rng.random_range(0.05..0.25),
                rng.random_range(0.9..1.1),
            ]
        })
        .collect();
    (0..spec.duration_frames())
        .map(|k| {
            let t = k as f64 / spec.fps;
            let mut boxes = [OrientedBox { cx: 0.0, cy: 0.0, w: 1.0, h: 1.0, angle_deg: 0.0 }; 4];
            for (r, b) in boxes.iter_mut().enumerate() {
                let [px, py, pa, fx, fa, scale] = params[r];
                let tau = std::f64::consts::TAU;
                *b = OrientedBox {
                    cx: app.anchors[r].0 + spec.drift_px * (tau * fx * t + px).sin(),
                    cy: app.anchors[r].1 + spec.drift_px * (tau * fx * 0.7 * t + py).sin(),
                    w: spec.roi_size * scale,
                    h: spec.roi_size * scale,
                    angle_deg: spec.rotation_deg * (tau * fa * t + pa).sin(),
                };
            }
            boxes
        })
        .collect()
}

fn render_frame(
    spec: &SynthSpec,
    app: &Appearance,
    boxes: &[OrientedBox; 4],
    cue: &[bool; 4],
    seed: u64,
    key: [u64; 3],
) -> Vec<u8> {
    let (w, h) = (spec.width, spec.height);
    let mut rng = substream(seed, "synth.pixels", &key);
    let mut buf = Vec::with_capacity(w * h * 3);
    let rot: Vec<(f64, f64)> = boxes.iter().map(|b| b.angle_deg.to_radians().sin_cos()).collect();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut c = app.background;
            let shade = app.gradient[0] * px + app.gradient[1] * py;
            for v in c.iter_mut() {
                *v += shade;
            }
            for (r, b) in boxes.iter().enumerate() {
                let (sin, cos) = rot[r];
                let (dx, dy) = (px - b.cx, py - b.cy);
                // box-local coordinates
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                if u.abs() >= b.w / 2.0 || v.abs() >= b.h / 2.0 {
                    continue;
                }
                let stripe = if (u * 0.7).sin() > 0.0 { 25.0 } else { -25.0 };
                c = app.roi_colors[r].map(|ch| ch + stripe);
                if cue[r] && u * u + v * v < (0.3 * b.w).powi(2) {
                    for (ch, bright) in c.iter_mut().zip(app.cue_color) {
                        *ch += spec.cue_strength * (bright - *ch);
                    }
                }
            }
            for ch in c {
                let n = if spec.noise > 0.0 { rng.random_range(-spec.noise..spec.noise) } else { 0.0 };
                buf.push((ch + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    buf
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a complete dataset under `out_dir` and returns its manifest path.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    let cue_idx = roi_indices(&spec.cue_rois)?;
    let frames = spec.duration_frames();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest { subjects: Vec::new() };
    let mut total_onsets = 0;
    for s in 0..spec.subjects {
        let subject_id = format!("subject{:02}", s + 1);
        let app = appearance(spec, seed, s);
        let mut videos = Vec::new();
        for v in 0..spec.videos_per_subject {
            let video_id = format!("{subject_id}_v{}", v + 1);
            let dir = out_dir.join(&video_id);
            let frames_dir = dir.join("frames");
            std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

            let onsets = plan_onsets(spec, seed, s, v);
            total_onsets += onsets.len();
            let flags = onset_frame_flags(&onsets, spec.fps, frames);
            let tracks = roi_tracks(spec, &app, seed, s, v);

            let mut text = String::from("video_id,onset_sec\n");
            for t in &onsets {
                writeln!(text, "{video_id},{t}").unwrap();
            }
            write_text(&dir.join("onsets.csv"), &text)?;
            let mut text = String::from("video_id,frame_idx,roi_name,cx,cy,w,h,angle_deg\n");
            for (k, boxes) in tracks.iter().enumerate() {
                for (r, b) in boxes.iter().enumerate() {
                    writeln!(text, "{video_id},{k},{},{},{},{},{},{}", ROI_NAMES[r], b.cx, b.cy, b.w, b.h, b.angle_deg).unwrap();
                }
            }
            write_text(&dir.join("rois.csv"), &text)?;

            let written: Vec<Result<()>> = crate::parallel::map_range(frames, |k| {
                let mut cue = [false; 4];
                for &r in &cue_idx {
                    cue[r] = flags[k];
                }
                let buf = render_frame(spec, &app, &tracks[k], &cue, seed, [s as u64, v as u64, k as u64]);
                let path = frames_dir.join(format!("{k:06}.png"));
                image::save_buffer(&path, &buf, spec.width as u32, spec.height as u32, image::ExtendedColorType::Rgb8)
                    .map_err(|e| Error::Image {
                        path: path.clone(),
                        message: e.to_string(),
                    })
            });
            written.into_iter().collect::<Result<()>>()?;

            videos.push(ManifestVideo {
                video_id: video_id.clone(),
                fps: spec.fps,
                duration_frames: frames,
                frames_dir: PathBuf::from(&video_id).join("frames"),
                onsets_csv: PathBuf::from(&video_id).join("onsets.csv"),
                rois_csv: PathBuf::from(&video_id).join("rois.csv"),
            });
        }
        manifest.subjects.push(ManifestSubject { id: subject_id, videos });
    }
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Dataset(e.to_string()))?;
    write_text(&manifest_path, &json)?;
    let spec_json = serde_json::to_string_pretty(spec).map_err(|e| Error::Dataset(e.to_string()))?;
    write_text(&out_dir.join("synth_spec.json"), &spec_json)?;
    Ok(SynthSummary {
        manifest_path,
        videos: spec.subjects * spec.videos_per_subject,
        onsets: total_onsets,
    })
}
