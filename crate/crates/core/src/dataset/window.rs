//! Oriented ROI window extraction and crop jitter.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{Dataset, Frame, OrientedBox, POST_FRAMES, PRE_FRAMES, WINDOW_FRAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Crops ROI sequences around a reference frame.
///
/// Each box is rotated upright about its center and resampled to
/// `out + margin` pixels per side; the output is the centered `out` crop
/// shifted by the jitter `(dx, dy)`, which is clamped to `±margin / 2`.
/// Samples that land outside the frame are clamped to the border and
/// counted.
#[derive(Debug)]
pub struct WindowExtractor {
    out_pixels: (usize, usize),
    margin: usize,
    clamped: AtomicU64,
}

impl WindowExtractor {
    /// `out_pixels` is `(height, width)`.
    pub fn new(out_pixels: (usize, usize), margin: usize) -> Result<Self> {
        if out_pixels.0 == 0 || out_pixels.1 == 0 {
            return Err(Error::InvalidArgument("output size must be positive".into()));
        }
        Ok(WindowExtractor {
            out_pixels,
            margin,
            clamped: AtomicU64::new(0),
        })
    }

    pub fn out_pixels(&self) -> (usize, usize) {
        self.out_pixels
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn max_jitter(&self) -> f64 {
        self.margin as f64 / 2.0
    }

    /// Number of pixel samples that fell outside their frame so far.
    pub fn clamped_samples(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Window `[ref - 5, ref + 3]` of video `video` as `[S, 3, 9, H, W]` in `[0, 1]`.
    pub fn extract(&self, dataset: &Dataset, video: usize, ref_frame: usize, jitter: (f64, f64), rois: &[usize]) -> Result<Tensor<f32>> {
        let frames = dataset.frames(video)?;
        self.extract_from_frames(&frames, &dataset.video(video).rois, ref_frame, jitter, rois)
    }

    pub fn extract_from_frames(
        &self,
        frames: &[Frame],
        boxes: &[[OrientedBox; 4]],
        ref_frame: usize,
        jitter: (f64, f64),
        rois: &[usize],
    ) -> Result<Tensor<f32>> {
        if ref_frame < PRE_FRAMES || ref_frame + POST_FRAMES >= frames.len() || frames.len() > boxes.len() {
            return Err(Error::InvalidArgument(format!(
                "window around frame {ref_frame} does not fit {} frames",
                frames.len()
            )));
        }
        if rois.is_empty() || rois.iter().any(|&r| r >= 4) {
            return Err(Error::InvalidArgument(format!("bad ROI selection {rois:?}")));
        }
        let (h, w) = self.out_pixels;
        let lim = self.max_jitter();
        let (dx, dy) = (jitter.0.clamp(-lim, lim), jitter.1.clamp(-lim, lim));
        let plane = h * w;
        let mut out = vec![0f32; rois.len() * 3 * WINDOW_FRAMES * plane];
        let mut clamped = 0u64;
        for (s, &roi) in rois.iter().enumerate() {
            for t in 0..WINDOW_FRAMES {
                let k = ref_frame - PRE_FRAMES + t;
                let frame = &frames[k];
                let b = boxes[k][roi];
                let (sin, cos) = b.angle_deg.to_radians().sin_cos();
                let sx = b.w / (w + self.margin) as f64;
                let sy = b.h / (h + self.margin) as f64;
                for i in 0..h {
                    let ly = (i as f64 + 0.5 + dy - h as f64 / 2.0) * sy;
                    for j in 0..w {
                        let lx = (j as f64 + 0.5 + dx - w as f64 / 2.0) * sx;
                        let x = b.cx + lx * cos - ly * sin;
                        let y = b.cy + lx * sin + ly * cos;
                        if x < 0.0 || y < 0.0 || x > frame.width as f64 || y > frame.height as f64 {
                            clamped += 1;
                        }
                        let rgb = bilinear(frame, x, y);
                        for (c, v) in rgb.iter().enumerate() {
                            out[(((s * 3 + c) * WINDOW_FRAMES + t) * h + i) * w + j] = *v;
                        }
                    }
                }
            }
        }
        if clamped > 0 {
            self.clamped.fetch_add(clamped, Ordering::Relaxed);
        }
        Tensor::from_vec(&[rois.len(), 3, WINDOW_FRAMES, h, w], out)
    }
}

/// Bilinear sample at continuous coordinates where pixel `(c, r)` has its
/// center at `(c + 0.5, r + 0.5)`; coordinates are clamped to the edge.
fn bilinear(frame: &Frame, x: f64, y: f64) -> [f32; 3] {
    let fx = (x - 0.5).clamp(0.0, (frame.width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (frame.height - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(frame.width - 1);
    let y1 = (y0 + 1).min(frame.height - 1);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    let px = |xx: usize, yy: usize, c: usize| frame.rgb[(yy * frame.width + xx) * 3 + c] as f64;
    let mut out = [0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = px(x0, y0, c) * (1.0 - ax) + px(x1, y0, c) * ax;
        let bot = px(x0, y1, c) * (1.0 - ax) + px(x1, y1, c) * ax;
        *o = ((top * (1.0 - ay) + bot * ay) / 255.0) as f32;
    }
    out
}

/// `count` crop offsets: `(0, 0)` first, the rest uniform in
/// `[-max_jitter, max_jitter]^2`.
pub fn augment_offsets<R: Rng + ?Sized>(rng: &mut R, max_jitter: f64, count: usize) -> Result<Vec<(f64, f64)>> {
    if count == 0 {
        return Err(Error::InvalidArgument("augment_offsets needs count >= 1".into()));
    }
    if !(max_jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!("max_jitter {max_jitter} must be >= 0")));
    }
    let mut out = vec![(0.0, 0.0)];
    for _ in 1..count {
        out.push(jitter_draw(rng, max_jitter));
    }
    Ok(out)
}

pub(crate) fn jitter_draw<R: Rng + ?Sized>(rng: &mut R, max_jitter: f64) -> (f64, f64) {
    if max_jitter == 0.0 {
        return (0.0, 0.0);
    }
    (
        rng.random_range(-max_jitter..=max_jitter),
        rng.random_range(-max_jitter..=max_jitter),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn pattern(width: usize, height: usize) -> Frame {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.push((x * 7 % 256) as u8);
                rgb.push((y * 11 % 256) as u8);
                rgb.push(if x < width / 3 && y < height / 2 { 250 } else { ((x * y) % 97) as u8 });
            }
        }
        Frame::new(width, height, rgb).unwrap()
    }

    fn clip(frame: Frame, b: OrientedBox) -> (Vec<Frame>, Vec<[OrientedBox; 4]>) {
        (vec![frame; 9], vec![[b; 4]; 9])
    }

    #[test]
    fn full_frame_box_is_plain_resize() {
        let f = pattern(32, 24);
        let b = OrientedBox { cx: 16.0, cy: 12.0, w: 32.0, h: 24.0, angle_deg: 0.0 };
        let (frames, boxes) = clip(f.clone(), b);
        // output on the pixel grid: identical to the frame
        let ex = WindowExtractor::new((24, 32), 0).unwrap();
        let t = ex.extract_from_frames(&frames, &boxes, 5, (0.0, 0.0), &[0]).unwrap();
        for y in 0..24 {
            for x in 0..32 {
                for c in 0..3 {
                    let got = t.data()[((c * 9 + 4) * 24 + y) * 32 + x];
                    let want = f.rgb[(y * 32 + x) * 3 + c] as f32 / 255.0;
                    assert!((got - want).abs() < 1e-6);
                }
            }
        }
        // half-size output: each sample sits between four source pixels
        let ex = WindowExtractor::new((12, 16), 0).unwrap();
        let t = ex.extract_from_frames(&frames, &boxes, 5, (0.0, 0.0), &[0]).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let mean: f64 = [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)]
                    .iter()
                    .map(|&(xx, yy)| f.rgb[(yy * 32 + xx) * 3] as f64)
                    .sum::<f64>()
                    / 4.0;
                let got = t.data()[(4 * 12 + y) * 16 + x] as f64;
                assert!((got - mean / 255.0).abs() < 1e-6);
            }
        }
        assert_eq!(ex.clamped_samples(), 0);
    }

    #[test]
    fn rotation_by_quarter_turn() {
        let f = pattern(40, 40);
        let n = 16;
        let base = OrientedBox { cx: 20.0, cy: 20.0, w: 16.0, h: 16.0, angle_deg: 0.0 };
        let ex = WindowExtractor::new((n, n), 0).unwrap();
        let (frames, boxes) = clip(f.clone(), base);
        let e0 = ex.extract_from_frames(&frames, &boxes, 5, (0.0, 0.0), &[1]).unwrap();
        let (frames, boxes) = clip(f, OrientedBox { angle_deg: 90.0, ..base });
        let e90 = ex.extract_from_frames(&frames, &boxes, 5, (0.0, 0.0), &[1]).unwrap();
        let mut worst = 0f32;
        for c in 0..3 {
            for i in 0..n {
                for j in 0..n {
                    let a = e90.data()[((c * 9) * n + i) * n + j];
                    // quarter-turn of the upright crop
                    let b = e0.data()[((c * 9) * n + j) * n + (n - 1 - i)];
                    worst = worst.max((a - b).abs());
                }
            }
        }
        assert!(worst <= 2.0 / 255.0, "max deviation {worst}");
        // the pattern is not rotation invariant, so the crops must differ
        assert!(e0.max_abs_diff(&e90) > 0.1);
    }

    #[test]
    fn deterministic_and_bounded() {
        let f = pattern(20, 20);
        let b = OrientedBox { cx: 18.0, cy: 3.0, w: 10.0, h: 8.0, angle_deg: 33.0 };
        let (frames, boxes) = clip(f, b);
        let ex = WindowExtractor::new((8, 8), 4).unwrap();
        let a = ex.extract_from_frames(&frames, &boxes, 5, (1.5, -2.0), &[0, 2]).unwrap();
        let c = ex.extract_from_frames(&frames, &boxes, 5, (1.5, -2.0), &[0, 2]).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.shape(), &[2, 3, 9, 8, 8]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // the box hangs over the frame corner
        assert!(ex.clamped_samples() > 0);
    }

    #[test]
    fn jitter_is_clamped_to_margin() {
        let f = pattern(30, 30);
        let b = OrientedBox { cx: 15.0, cy: 15.0, w: 12.0, h: 12.0, angle_deg: 0.0 };
        let (frames, boxes) = clip(f, b);
        let ex = WindowExtractor::new((8, 8), 4).unwrap();
        let a = ex.extract_from_frames(&frames, &boxes, 5, (2.0, 2.0), &[0]).unwrap();
        let c = ex.extract_from_frames(&frames, &boxes, 5, (50.0, 9.0), &[0]).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn window_bounds() {
        let f = pattern(10, 10);
        let b = OrientedBox { cx: 5.0, cy: 5.0, w: 4.0, h: 4.0, angle_deg: 0.0 };
        let ex = WindowExtractor::new((4, 4), 0).unwrap();
        let (frames, boxes) = clip(f, b);
        assert!(ex.extract_from_frames(&frames, &boxes, 4, (0.0, 0.0), &[0]).is_err());
        assert!(ex.extract_from_frames(&frames[..8], &boxes, 5, (0.0, 0.0), &[0]).is_err());
    }

    #[test]
    fn offsets() {
        let mut rng = substream(3, "aug", &[]);
        assert_eq!(augment_offsets(&mut rng, 4.0, 1).unwrap(), vec![(0.0, 0.0)]);
        let a = augment_offsets(&mut substream(3, "aug", &[]), 4.0, 4).unwrap();
        let b = augment_offsets(&mut substream(3, "aug", &[]), 4.0, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], (0.0, 0.0));
        assert!(a[1..].iter().all(|&(x, y)| x.abs() <= 4.0 && y.abs() <= 4.0));
        assert!(augment_offsets(&mut rng, 4.0, 0).is_err());

        // uniform on [-m, m] has variance m^2 / 3
        let m = 4.0;
        let n = 10_000;
        let draws = augment_offsets(&mut substream(9, "aug", &[]), m, n + 1).unwrap();
        let sigma = (m * m / 3.0 / n as f64).sqrt();
        let mean_x = draws[1..].iter().map(|d| d.0).sum::<f64>() / n as f64;
        let mean_y = draws[1..].iter().map(|d| d.1).sum::<f64>() / n as f64;
        assert!(mean_x.abs() < 3.0 * sigma && mean_y.abs() < 3.0 * sigma);
    }
}
