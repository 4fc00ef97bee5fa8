//! Manifest, onset CSV and ROI CSV ingestion.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, OnsetAnnotations, OrientedBox, Subject, Video};
use crate::error::{Error, Result};
use crate::model::ROI_NAMES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub videos: Vec<ManifestVideo>,
}

/// Paths are relative to the manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub video_id: String,
    pub fps: f64,
    pub duration_frames: usize,
    pub frames_dir: PathBuf,
    pub onsets_csv: PathBuf,
    pub rois_csv: PathBuf,
}

fn annotation_error(video_id: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Annotation {
        video_id: video_id.to_string(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn check_header(reader: &mut csv::Reader<File>, expected: &[&str], video_id: &str) -> Result<()> {
    let header = reader
        .headers()
        .map_err(|e| annotation_error(video_id, 1, e.to_string()))?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(annotation_error(
            video_id,
            1,
            format!("header {:?}, expected {:?}", found.join(","), expected.join(",")),
        ));
    }
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, name: &str, video_id: &str, line: usize) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| annotation_error(video_id, line, format!("missing field {name}")))
}

fn number(rec: &csv::StringRecord, i: usize, name: &str, video_id: &str, line: usize) -> Result<f64> {
    let s = field(rec, i, name, video_id, line)?;
    let v: f64 = s
        .parse()
        .map_err(|_| annotation_error(video_id, line, format!("{name} {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(annotation_error(video_id, line, format!("{name} is not finite")));
    }
    Ok(v)
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Reads and validates an onsets CSV (`video_id,onset_sec`).
pub(crate) fn read_onsets(path: &Path, video_id: &str, fps: f64, duration_frames: usize) -> Result<Vec<f64>> {
    let mut reader = open_csv(path)?;
    check_header(&mut reader, &["video_id", "onset_sec"], video_id)?;
    let duration = duration_frames as f64 / fps;
    let mut onsets: Vec<f64> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| annotation_error(video_id, i + 2, e.to_string()))?;
        let line = record_line(&rec, i + 2);
        let vid = field(&rec, 0, "video_id", video_id, line)?;
        if vid != video_id {
            return Err(annotation_error(video_id, line, format!("row belongs to video {vid:?}")));
        }
        let t = number(&rec, 1, "onset_sec", video_id, line)?;
        if !(0.0..duration).contains(&t) {
            return Err(annotation_error(
                video_id,
                line,
                format!("onset {t} outside video duration [0, {duration})"),
            ));
        }
        if let Some(&prev) = onsets.last() {
            if t == prev {
                return Err(annotation_error(video_id, line, format!("duplicate onset {t}")));
            }
            if t < prev {
                return Err(annotation_error(video_id, line, format!("onset {t} is earlier than {prev}")));
            }
        }
        onsets.push(t);
    }
    Ok(onsets)
}

/// Reads and validates a ROI CSV; every frame must carry one box per ROI.
pub(crate) fn read_rois(path: &Path, video_id: &str, duration_frames: usize) -> Result<Vec<[OrientedBox; 4]>> {
    let mut reader = open_csv(path)?;
    check_header(
        &mut reader,
        &["video_id", "frame_idx", "roi_name", "cx", "cy", "w", "h", "angle_deg"],
        video_id,
    )?;
    let mut boxes: Vec<[Option<OrientedBox>; 4]> = vec![[None; 4]; duration_frames];
    let mut last_line = 1;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| annotation_error(video_id, i + 2, e.to_string()))?;
        let line = record_line(&rec, i + 2);
        last_line = line;
        let vid = field(&rec, 0, "video_id", video_id, line)?;
        if vid != video_id {
            return Err(annotation_error(video_id, line, format!("row belongs to video {vid:?}")));
        }
        let frame_s = field(&rec, 1, "frame_idx", video_id, line)?;
        let frame: usize = frame_s
            .parse()
            .map_err(|_| annotation_error(video_id, line, format!("frame_idx {frame_s:?} is not an index")))?;
        if frame >= duration_frames {
            return Err(annotation_error(
                video_id,
                line,
                format!("frame_idx {frame} beyond duration {duration_frames}"),
            ));
        }
        let name = field(&rec, 2, "roi_name", video_id, line)?;
        let roi = ROI_NAMES
            .iter()
            .position(|r| *r == name)
            .ok_or_else(|| annotation_error(video_id, line, format!("unknown roi_name {name:?}")))?;
        let b = OrientedBox {
            cx: number(&rec, 3, "cx", video_id, line)?,
            cy: number(&rec, 4, "cy", video_id, line)?,
            w: number(&rec, 5, "w", video_id, line)?,
            h: number(&rec, 6, "h", video_id, line)?,
            angle_deg: number(&rec, 7, "angle_deg", video_id, line)?,
        };
        if b.w <= 0.0 || b.h <= 0.0 {
            return Err(annotation_error(video_id, line, "box width and height must be positive"));
        }
        let slot = &mut boxes[frame][roi];
        if slot.is_some() {
            return Err(annotation_error(video_id, line, format!("duplicate box for frame {frame}, roi {name}")));
        }
        *slot = Some(b);
    }
    boxes
        .into_iter()
        .enumerate()
        .map(|(k, frame)| {
            let mut out = [OrientedBox { cx: 0.0, cy: 0.0, w: 1.0, h: 1.0, angle_deg: 0.0 }; 4];
            for (r, b) in frame.iter().enumerate() {
                out[r] = b.ok_or_else(|| {
                    annotation_error(
                        video_id,
                        last_line + 1,
                        format!("missing ROI {} for frame {k} (end of file)", ROI_NAMES[r]),
                    )
                })?;
            }
            Ok(out)
        })
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

/// Loads a manifest and validates every referenced annotation file. Frames
/// are not read until requested.
pub fn load_annotations(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut subjects = Vec::new();
    let mut videos: Vec<Video> = Vec::new();
    for (si, s) in manifest.subjects.iter().enumerate() {
        if subjects.iter().any(|x: &Subject| x.id == s.id) {
            return Err(Error::Dataset(format!("duplicate subject id {:?}", s.id)));
        }
        let mut idx = Vec::new();
        for v in &s.videos {
            if videos.iter().any(|x| x.video_id == v.video_id) {
                return Err(Error::Dataset(format!("duplicate video id {:?}", v.video_id)));
            }
            if !(v.fps > 0.0) || v.duration_frames == 0 {
                return Err(Error::Dataset(format!(
                    "{}: fps and duration_frames must be positive",
                    v.video_id
                )));
            }
            let onsets = read_onsets(&resolve(&base, &v.onsets_csv), &v.video_id, v.fps, v.duration_frames)?;
            let rois = read_rois(&resolve(&base, &v.rois_csv), &v.video_id, v.duration_frames)?;
            let ann = OnsetAnnotations {
                video_id: v.video_id.clone(),
                fps: v.fps,
                duration_frames: v.duration_frames,
                onsets,
            };
            idx.push(videos.len());
            videos.push(Video::new(si, ann, rois, Some(resolve(&base, &v.frames_dir)))?);
        }
        subjects.push(Subject { id: s.id.clone(), videos: idx });
    }
    Ok(Dataset::from_disk(base, subjects, videos))
}
