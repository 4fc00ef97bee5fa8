//! Annotated clarinetist videos: ingestion, labeling, sampling, splits.
//!
//! A [`Dataset`] owns per-video onset annotations and per-frame oriented ROI
//! boxes, and loads frames lazily. Frames are decoded a whole video at a time
//! and cached; every video whose frames are touched is recorded so tests can
//! prove which subjects a run has read.

mod annotations;
mod index;
mod labels;
mod sampler;
mod splits;
mod synth;
mod window;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

pub use annotations::{load_annotations, read_manifest, Manifest, ManifestSubject, ManifestVideo};
pub use index::{build_index, epoch_size, SampleIndex, WindowRef};
pub use labels::{classify_window, classify_with_flags, label_frame, onset_frame_flags, onset_frame_index, FrameLabel, WindowLabel};
pub use sampler::{BalancedSampler, BatchPlan, PlannedSample, BATCH_COMPOSITION, BATCH_SIZE};
pub use splits::{make_splits, SplitPlan, SUBJECTS_PER_SPLIT};
pub use synth::{generate_synthetic, plan_onsets, SynthSpec, SynthSummary};
pub use window::{augment_offsets, WindowExtractor};

use crate::error::{Error, Result};
use crate::model::{StreamBatch, ROI_NAMES};
use crate::tensor::Tensor;

/// Frames before the reference frame in a window.
pub const PRE_FRAMES: usize = 5;
/// Frames after the reference frame in a window.
pub const POST_FRAMES: usize = 3;
pub const WINDOW_FRAMES: usize = PRE_FRAMES + 1 + POST_FRAMES;

/// Ground-truth onsets of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetAnnotations {
    pub video_id: String,
    pub fps: f64,
    pub duration_frames: usize,
    /// Strictly increasing times in seconds, each in `[0, duration_frames / fps)`.
    pub onsets: Vec<f64>,
}

impl OnsetAnnotations {
    pub fn duration_sec(&self) -> f64 {
        self.duration_frames as f64 / self.fps
    }
}

/// An oriented ROI box in frame pixel coordinates; `angle_deg` rotates the
/// box axes about its center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_deg: f64,
}

/// An 8-bit RGB frame, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "frame {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        Ok(Frame { width, height, rgb })
    }
}

#[derive(Clone, Debug)]
pub struct Video {
    pub video_id: String,
    pub subject: usize,
    pub annotations: OnsetAnnotations,
    /// One box per canonical ROI ([`ROI_NAMES`] order) per frame.
    pub rois: Vec<[OrientedBox; 4]>,
    /// Per-frame onset flags derived from the annotations.
    pub onset_frames: Vec<bool>,
    frames_dir: Option<PathBuf>,
}

impl Video {
    pub fn new(
        subject: usize,
        annotations: OnsetAnnotations,
        rois: Vec<[OrientedBox; 4]>,
        frames_dir: Option<PathBuf>,
    ) -> Result<Self> {
        if rois.len() != annotations.duration_frames {
            return Err(Error::Dataset(format!(
                "{}: {} ROI frames for {} video frames",
                annotations.video_id,
                rois.len(),
                annotations.duration_frames
            )));
        }
        let onset_frames = onset_frame_flags(&annotations.onsets, annotations.fps, annotations.duration_frames);
        Ok(Video {
            video_id: annotations.video_id.clone(),
            subject,
            annotations,
            rois,
            onset_frames,
            frames_dir,
        })
    }

    pub fn duration_frames(&self) -> usize {
        self.annotations.duration_frames
    }

    /// Reference frames whose whole window lies inside the video.
    pub fn window_range(&self) -> std::ops::Range<usize> {
        PRE_FRAMES..self.duration_frames().saturating_sub(POST_FRAMES).max(PRE_FRAMES)
    }

    /// The oriented track of one ROI across the video.
    pub fn roi_track(&self, roi: usize) -> Vec<OrientedBox> {
        self.rois.iter().map(|b| b[roi]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subject {
    pub id: String,
    pub videos: Vec<usize>,
}

enum FrameSource {
    Disk,
    Memory(Vec<Arc<Vec<Frame>>>),
}

struct FrameCache {
    loaded: HashMap<usize, Arc<Vec<Frame>>>,
    order: VecDeque<usize>,
}

/// One video for [`Dataset::in_memory`]: annotations, per-frame ROI boxes
/// and decoded frames.
pub type InMemoryVideo = (OnsetAnnotations, Vec<[OrientedBox; 4]>, Vec<Frame>);

/// Annotations plus lazily loaded frames for a set of subjects.
pub struct Dataset {
    root: PathBuf,
    subjects: Vec<Subject>,
    videos: Vec<Video>,
    source: FrameSource,
    cache: Mutex<FrameCache>,
    cache_limit: Option<usize>,
    accessed: Mutex<BTreeSet<usize>>,
}

impl Dataset {
    pub(crate) fn from_disk(root: PathBuf, subjects: Vec<Subject>, videos: Vec<Video>) -> Self {
        Dataset {
            root,
            subjects,
            videos,
            source: FrameSource::Disk,
            cache: Mutex::new(FrameCache {
                loaded: HashMap::new(),
                order: VecDeque::new(),
            }),
            cache_limit: None,
            accessed: Mutex::new(BTreeSet::new()),
        }
    }

    /// A dataset whose frames are already in memory. `subjects` lists
    /// `(subject id, videos)`, each video with its frames.
    pub fn in_memory(subjects: Vec<(String, Vec<InMemoryVideo>)>) -> Result<Self> {
        let mut subj = Vec::new();
        let mut videos = Vec::new();
        let mut frames = Vec::new();
        for (si, (id, vids)) in subjects.into_iter().enumerate() {
            let mut idx = Vec::new();
            for (ann, rois, fr) in vids {
                if fr.len() != ann.duration_frames {
                    return Err(Error::Dataset(format!(
                        "{}: {} frames for duration {}",
                        ann.video_id,
                        fr.len(),
                        ann.duration_frames
                    )));
                }
                idx.push(videos.len());
                videos.push(Video::new(si, ann, rois, None)?);
                frames.push(Arc::new(fr));
            }
            subj.push(Subject { id, videos: idx });
        }
        let mut ds = Dataset::from_disk(PathBuf::new(), subj, videos);
        ds.source = FrameSource::Memory(frames);
        Ok(ds)
    }

    pub fn root(&self) -> &std::path::Path {
        &self.root
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn subject(&self, id: &str) -> Result<&Subject> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Dataset(format!("unknown subject {id:?}")))
    }

    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn video(&self, index: usize) -> &Video {
        &self.videos[index]
    }

    /// Keeps at most `videos` decoded videos in memory.
    pub fn set_cache_limit(&mut self, videos: Option<usize>) {
        self.cache_limit = videos.map(|v| v.max(1));
    }

    /// Ids of every video whose frames have been read so far.
    pub fn accessed_video_ids(&self) -> BTreeSet<String> {
        self.accessed
            .lock()
            .unwrap()
            .iter()
            .map(|&v| self.videos[v].video_id.clone())
            .collect()
    }

    pub fn reset_access_log(&self) {
        self.accessed.lock().unwrap().clear();
    }

    /// All frames of a video.
    pub fn frames(&self, video: usize) -> Result<Arc<Vec<Frame>>> {
        self.accessed.lock().unwrap().insert(video);
        if let FrameSource::Memory(f) = &self.source {
            return Ok(f[video].clone());
        }
        if let Some(f) = self.cache.lock().unwrap().loaded.get(&video) {
            return Ok(f.clone());
        }
        let loaded = Arc::new(self.read_frames(video)?);
        let mut cache = self.cache.lock().unwrap();
        if let std::collections::hash_map::Entry::Vacant(slot) = cache.loaded.entry(video) {
            slot.insert(loaded.clone());
            cache.order.push_back(video);
            if let Some(limit) = self.cache_limit {
                while cache.order.len() > limit {
                    let old = cache.order.pop_front().unwrap();
                    cache.loaded.remove(&old);
                }
            }
        }
        Ok(loaded)
    }

    fn read_frames(&self, video: usize) -> Result<Vec<Frame>> {
        let v = &self.videos[video];
        let dir = v
            .frames_dir
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("{}: no frames directory", v.video_id)))?;
        let frames: Vec<Result<Frame>> = crate::parallel::map_range(v.duration_frames(), |k| {
            let path = dir.join(format!("{k:06}.png"));
            let img = image::open(&path)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?
                .into_rgb8();
            let (w, h) = img.dimensions();
            Frame::new(w as usize, h as usize, img.into_raw())
        });
        frames.into_iter().collect()
    }

    /// Extracts and stacks the windows of a batch plan into per-stream
    /// tensors `[N, 3, 9, H, W]`.
    pub fn materialize(&self, samples: &[PlannedSample], extractor: &WindowExtractor, rois: &[usize]) -> Result<StreamBatch<f32>> {
        let windows: Vec<(WindowRef, (f64, f64))> = samples.iter().map(|s| (s.window, s.jitter)).collect();
        self.materialize_windows(&windows, extractor, rois)
    }

    pub fn materialize_windows(
        &self,
        windows: &[(WindowRef, (f64, f64))],
        extractor: &WindowExtractor,
        rois: &[usize],
    ) -> Result<StreamBatch<f32>> {
        if windows.is_empty() {
            return Err(Error::InvalidArgument("empty window list".into()));
        }
        let extracted: Vec<Result<Tensor<f32>>> = crate::parallel::map_range(windows.len(), |i| {
            let (w, jitter) = windows[i];
            extractor.extract(self, w.video, w.ref_frame, jitter, rois)
        });
        let extracted = extracted.into_iter().collect::<Result<Vec<_>>>()?;
        let [s, c, t, h, wd] = extracted[0].dims5()?;
        let per_stream = c * t * h * wd;
        let n = windows.len();
        let streams = (0..s)
            .map(|si| {
                let mut data = Vec::with_capacity(n * per_stream);
                for e in &extracted {
                    data.extend_from_slice(&e.data()[si * per_stream..][..per_stream]);
                }
                Tensor::from_vec(&[n, c, t, h, wd], data)
            })
            .collect::<Result<Vec<_>>>()?;
        StreamBatch::new(streams)
    }
}

/// Maps ROI names to canonical indices.
pub fn roi_indices(names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            ROI_NAMES
                .iter()
                .position(|r| r == n)
                .ok_or_else(|| Error::Config(format!("unknown ROI {n:?}; known: {}", ROI_NAMES.join(", "))))
        })
        .collect()
}
