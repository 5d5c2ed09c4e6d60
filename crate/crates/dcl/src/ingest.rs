//! Corpus construction: load frame files, resize, drop the frame rate,
//! segment into camera-stable shots by border pixel turnover, and write a
//! chronological manifest the trainer consumes.
//!
//! A cut is declared between consecutive frames when more than the configured
//! fraction of border pixels "turn over" (max-channel change above a
//! per-pixel threshold). Stable runs longer than the maximum shot length are
//! chunked; anything shorter than the minimum is discarded.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{DclError, Result};
use crate::reward::max_channel;
use crate::tensor::Tensor3f;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub target_height: usize,
    pub target_width: usize,
    pub src_fps: usize,
    pub dst_fps: usize,
    pub border_width: usize,
    /// Cut when the border turnover rate exceeds this fraction.
    pub turnover_threshold: f64,
    /// A border pixel turns over when its max-channel change exceeds this.
    pub pixel_threshold: f64,
    pub min_shot_frames: usize,
    pub max_shot_frames: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            target_height: 180,
            target_width: 320,
            src_fps: 5,
            dst_fps: 5,
            border_width: 10,
            turnover_threshold: 0.25,
            pixel_threshold: 0.1,
            min_shot_frames: 20,
            max_shot_frames: 32,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.turnover_threshold)
            || !(0.0..=1.0).contains(&self.pixel_threshold)
        {
            return Err(DclError::Config("thresholds must lie in [0,1]".into()));
        }
        if self.border_width == 0
            || self.border_width >= self.target_height.min(self.target_width) / 2
        {
            return Err(DclError::Config(format!(
                "border width {} out of range for {}x{}",
                self.border_width, self.target_height, self.target_width
            )));
        }
        if self.min_shot_frames < 2 || self.max_shot_frames < self.min_shot_frames {
            return Err(DclError::Config("shot length bounds are inconsistent".into()));
        }
        if self.dst_fps == 0 || self.dst_fps > self.src_fps {
            return Err(DclError::Config("dst fps must lie in 1..=src fps".into()));
        }
        Ok(())
    }
}

/// Contiguous camera-stable frame run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Shot {
    pub id: usize,
    pub source: usize,
    pub frames: Vec<PathBuf>,
}

/// Chronological training corpus: sources, shots and the config that built it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: IngestConfig,
    pub sources: Vec<PathBuf>,
    pub shots: Vec<Shot>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Bilinear resize with corner-aligned sampling and edge clamping.
pub fn resize_bilinear(img: &Tensor3f, out_h: usize, out_w: usize) -> Tensor3f {
    let (h, w) = img.spatial_shape();
    let c = img.channels();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    Tensor3f::from_fn(out_h, out_w, c, |i, j, ch| {
        let y = i as f64 * sy;
        let x = j as f64 * sx;
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let top = img.at(y0, x0, ch) as f64 * (1.0 - fx) + img.at(y0, x1, ch) as f64 * fx;
        let bot = img.at(y1, x0, ch) as f64 * (1.0 - fx) + img.at(y1, x1, ch) as f64 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

/// Indices kept when dropping from `src_fps` to `dst_fps`: `⌊n·src/dst⌋`.
pub fn downsample_indices(frame_count: usize, src_fps: usize, dst_fps: usize) -> Result<Vec<usize>> {
    if dst_fps == 0 || dst_fps > src_fps {
        return Err(DclError::Config(format!("cannot resample {src_fps} fps to {dst_fps} fps")));
    }
    let mut out = Vec::new();
    let mut n = 0usize;
    loop {
        let idx = n * src_fps / dst_fps;
        if idx >= frame_count {
            break;
        }
        out.push(idx);
        n += 1;
    }
    Ok(out)
}

/// Keep every `⌊n·src/dst⌋`-th frame.
pub fn downsample_fps<T: Clone>(frames: &[T], src_fps: usize, dst_fps: usize) -> Result<Vec<T>> {
    let idx = downsample_indices(frames.len(), src_fps, dst_fps)?;
    Ok(idx.into_iter().map(|i| frames[i].clone()).collect())
}

/// Fraction of border pixels whose max-channel value changed by more than
/// `pixel_threshold` between two frames. The border is every pixel within
/// `width` of an edge.
pub fn border_turnover(
    a: &Tensor3f,
    b: &Tensor3f,
    width: usize,
    pixel_threshold: f64,
) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(DclError::ShapeMismatch("turnover frames".into()));
    }
    let (h, w) = a.spatial_shape();
    let ma = max_channel(a);
    let mb = max_channel(b);
    let mut border = 0usize;
    let mut turned = 0usize;
    for i in 0..h {
        for j in 0..w {
            let on_border = i < width || i >= h - width || j < width || j >= w - width;
            if !on_border {
                continue;
            }
            border += 1;
            if (ma.at(i, j) as f64 - mb.at(i, j) as f64).abs() > pixel_threshold {
                turned += 1;
            }
        }
    }
    Ok(turned as f64 / border as f64)
}

/// Split a run of `len` frames into shots: chunks of at most `max` frames,
/// dropping any chunk shorter than `min`. Returned as (start, len) pairs.
fn chunk_run(start: usize, len: usize, min: usize, max: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut off = 0usize;
    while len - off >= min {
        let take = (len - off).min(max);
        if take < min {
            break;
        }
        out.push((start + off, take));
        off += take;
    }
    out
}

/// Segment a chronological frame sequence into shots: cut where the border
/// turnover exceeds the threshold, chunk long stable runs, discard short
/// remainders. Returns (start, len) index ranges into the input.
pub fn segment_shots(frames: &[Tensor3f], cfg: &IngestConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut run_start = 0usize;
    for t in 1..frames.len() {
        let rate =
            border_turnover(&frames[t - 1], &frames[t], cfg.border_width, cfg.pixel_threshold)?;
        if rate > cfg.turnover_threshold {
            runs.push((run_start, t - run_start));
            run_start = t;
        }
    }
    runs.push((run_start, frames.len() - run_start));

    let mut shots = Vec::new();
    for (start, len) in runs {
        shots.extend(chunk_run(start, len, cfg.min_shot_frames, cfg.max_shot_frames));
    }
    Ok(shots)
}

/// Numerically sorted `frame_*.ppm` files in a directory.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().map_or(false, |e| e == "ppm")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .map_or(false, |s| s.starts_with("frame_"))
        })
        .collect();
    files.sort();
    Ok(files)
}
