//! Deterministic synthetic scenes: a frozen low-contrast value-noise
//! background with moving blobs (discs and rectangles) plus per-transition
//! ground truth. For every consecutive pair the generator emits the motion
//! mask (pixels whose noiseless rendering differs) and the region mask
//! (pixels covered by a blob in either frame), so detection quality can be
//! scored without external labels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DclError, Result};
use crate::eval::Mask;
use crate::rng::{self, Stream};
use crate::tensor::Tensor3f;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobShape {
    Disc,
    Rect,
}

/// One moving blob: constant velocity, bouncing off the frame borders so it
/// always stays fully inside.
#[derive(Debug, Clone)]
pub struct BlobSpec {
    pub shape: BlobShape,
    /// Diameter for discs, side length for rectangles.
    pub size: f64,
    pub color: [f32; 3],
    /// Starting center position (row, col).
    pub start: (f64, f64),
    /// Per-frame velocity (rows, cols).
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub blobs: Vec<BlobSpec>,
    /// Cell size of the coarse grid behind the value-noise background.
    pub background_cell: usize,
    /// Peak-to-peak contrast of the background texture.
    pub background_contrast: f64,
    /// Standard deviation of per-pixel gaussian noise added to every frame.
    pub noise_sigma: f64,
}

impl SceneConfig {
    /// Small default scene: two blobs on a 64×64 frame, 64 frames.
    pub fn small(blob_count: usize) -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 64,
            blobs: Vec::with_capacity(blob_count),
            background_cell: 8,
            background_contrast: 0.05,
            noise_sigma: 0.005,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(DclError::Config("scene needs at least 2 frames".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(DclError::Config("scene dimensions must be positive".into()));
        }
        for b in &self.blobs {
            if b.size <= 0.0 || b.size >= self.height.min(self.width) as f64 {
                return Err(DclError::Config(format!("blob size {} out of range", b.size)));
            }
        }
        Ok(())
    }
}

/// Fill in blob specs derived from the seed: alternating disc/rect shapes,
/// random bright colors, random start positions and speeds in
/// `[min_speed, max_speed]`.
pub fn random_blobs(
    cfg: &mut SceneConfig,
    count: usize,
    diameter: f64,
    min_speed: f64,
    max_speed: f64,
    seed: u64,
) {
    let mut rng = rng::stream_rng(seed, Stream::Scene);
    let margin = diameter / 2.0 + 1.0;
    for b in 0..count {
        let shape = if b % 2 == 0 { BlobShape::Disc } else { BlobShape::Rect };
        let color = [
            0.5 + 0.5 * rng.gen::<f32>(),
            0.5 + 0.5 * rng.gen::<f32>(),
            0.5 + 0.5 * rng.gen::<f32>(),
        ];
        let start = (
            rng.gen_range(margin..cfg.height as f64 - margin),
            rng.gen_range(margin..cfg.width as f64 - margin),
        );
        let speed = rng.gen_range(min_speed..=max_speed);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        cfg.blobs.push(BlobSpec {
            shape,
            size: diameter,
            color,
            start,
            velocity: (speed * angle.sin(), speed * angle.cos()),
        });
    }
}

/// Everything a generated scene knows about itself.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub frames: Vec<Tensor3f>,
    /// `motion_masks[t]`: noiseless renders of frames t and t+1 differ.
    pub motion_masks: Vec<Mask>,
    /// `region_masks[t]`: a blob covers the pixel in frame t or t+1.
    pub region_masks: Vec<Mask>,
}

/// Center position of a blob at frame `t`, with border bouncing.
fn blob_center(blob: &BlobSpec, t: usize, h: f64, w: f64) -> (f64, f64) {
    let half = blob.size / 2.0;
    let bounce = |start: f64, v: f64, lo: f64, hi: f64| -> f64 {
        if hi <= lo {
            return start;
        }
        let span = hi - lo;
        let raw = start - lo + v * t as f64;
        // reflect into [0, 2·span), then fold
        let m = raw.rem_euclid(2.0 * span);
        lo + if m < span { m } else { 2.0 * span - m }
    };
    (
        bounce(blob.start.0, blob.velocity.0, half, h - half),
        bounce(blob.start.1, blob.velocity.1, half, w - half),
    )
}

fn blob_covers(blob: &BlobSpec, center: (f64, f64), i: usize, j: usize) -> bool {
    let di = i as f64 - center.0;
    let dj = j as f64 - center.1;
    let half = blob.size / 2.0;
    match blob.shape {
        BlobShape::Disc => di * di + dj * dj <= half * half,
        BlobShape::Rect => di.abs() <= half && dj.abs() <= half,
    }
}

/// Smooth value-noise background: a coarse random grid upsampled bilinearly,
/// centered on 0.5 with the configured contrast.
fn background(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Tensor3f {
    let cell = cfg.background_cell.max(1);
    let gh = cfg.height / cell + 2;
    let gw = cfg.width / cell + 2;
    let grid: Vec<f32> = (0..gh * gw * 3).map(|_| rng.gen::<f32>()).collect();
    let amp = cfg.background_contrast as f32;
    Tensor3f::from_fn(cfg.height, cfg.width, 3, |i, j, c| {
        let y = i as f32 / cell as f32;
        let x = j as f32 / cell as f32;
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let g = |yy: usize, xx: usize| grid[(yy * gw + xx) * 3 + c];
        let top = g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx;
        let bot = g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx;
        let v = top * (1.0 - fy) + bot * fy;
        0.5 + amp * (v - 0.5)
    })
}

/// Noiseless rendering of frame `t`.
fn render(cfg: &SceneConfig, bg: &Tensor3f, t: usize) -> Tensor3f {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let centers: Vec<(f64, f64)> = cfg.blobs.iter().map(|b| blob_center(b, t, h, w)).collect();
    Tensor3f::from_fn(cfg.height, cfg.width, 3, |i, j, c| {
        // later blobs draw on top
        let mut v = bg.at(i, j, c);
        for (blob, &center) in cfg.blobs.iter().zip(&centers) {
            if blob_covers(blob, center, i, j) {
                v = blob.color[c];
            }
        }
        v
    })
}

fn support_mask(cfg: &SceneConfig, t: usize) -> Mask {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let centers: Vec<(f64, f64)> = cfg.blobs.iter().map(|b| blob_center(b, t, h, w)).collect();
    Mask::from_fn(cfg.height, cfg.width, |i, j| {
        cfg.blobs.iter().zip(&centers).any(|(b, &c)| blob_covers(b, c, i, j))
    })
}

/// Generate frames plus per-transition motion and region masks;
/// deterministic for a fixed `(cfg, seed)`.
pub fn gen_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneData> {
    cfg.validate()?;
    let mut rng = rng::stream_rng(seed, Stream::Scene);
    let bg = background(cfg, &mut rng);

    let clean: Vec<Tensor3f> = (0..cfg.frames).map(|t| render(cfg, &bg, t)).collect();
    let supports: Vec<Mask> = (0..cfg.frames).map(|t| support_mask(cfg, t)).collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut noisy = clean[t].clone();
        if cfg.noise_sigma > 0.0 {
            for v in noisy.data_mut() {
                let n: f64 = rng::truncated_normal(&mut rng, 0.0, cfg.noise_sigma);
                *v = (*v + n as f32).clamp(0.0, 1.0);
            }
        } else {
            for v in noisy.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        frames.push(noisy);
    }

    let mut motion_masks = Vec::with_capacity(cfg.frames - 1);
    let mut region_masks = Vec::with_capacity(cfg.frames - 1);
    for t in 0..cfg.frames - 1 {
        let (a, b) = (&clean[t], &clean[t + 1]);
        motion_masks.push(Mask::from_fn(cfg.height, cfg.width, |i, j| {
            (0..3).any(|c| a.at(i, j, c) != b.at(i, j, c))
        }));
        region_masks.push(Mask::from_fn(cfg.height, cfg.width, |i, j| {
            supports[t].at(i, j) || supports[t + 1].at(i, j)
        }));
    }

    Ok(SceneData { frames, motion_masks, region_masks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::max_channel;

    fn moving_disc_cfg() -> SceneConfig {
        let mut cfg = SceneConfig::small(0);
        cfg.frames = 12;
        cfg.noise_sigma = 0.0;
        cfg.blobs.push(BlobSpec {
            shape: BlobShape::Disc,
            size: 15.0,
            color: [0.95, 0.9, 0.2],
            start: (32.0, 32.0),
            velocity: (1.0, 0.0),
        });
        cfg
    }

    #[test]
    fn static_noiseless_scene_has_identical_frames_and_empty_masks() {
        let mut cfg = SceneConfig::small(0);
        cfg.frames = 6;
        cfg.noise_sigma = 0.0;
        cfg.blobs.push(BlobSpec {
            shape: BlobShape::Rect,
            size: 11.0,
            color: [0.9, 0.1, 0.1],
            start: (20.0, 20.0),
            velocity: (0.0, 0.0),
        });
        let scene = gen_scene(&cfg, 3).unwrap();
        for f in &scene.frames[1..] {
            assert_eq!(f, &scene.frames[0]);
        }
        for m in &scene.motion_masks {
            assert_eq!(m.count(), 0);
        }
        for r in &scene.region_masks {
            assert!(r.count() > 0, "region mask still marks the blob support");
        }
    }

    #[test]
    fn mask_is_symmetric_difference_of_disc_supports() {
        let cfg = moving_disc_cfg();
        let scene = gen_scene(&cfg, 4).unwrap();

        // geometric oracle: rasterize the disc at t and t+1 directly
        for t in 0..3 {
            let c0 = blob_center(&cfg.blobs[0], t, 64.0, 64.0);
            let c1 = blob_center(&cfg.blobs[0], t + 1, 64.0, 64.0);
            for i in 0..64 {
                for j in 0..64 {
                    let in0 = blob_covers(&cfg.blobs[0], c0, i, j);
                    let in1 = blob_covers(&cfg.blobs[0], c1, i, j);
                    // background and blob color differ everywhere, so the
                    // noiseless diff is exactly the support symmetric difference
                    assert_eq!(
                        scene.motion_masks[t].at(i, j),
                        in0 != in1,
                        "pair {t}, pixel ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn noiseless_max_channel_difference_is_nonzero_exactly_on_mask() {
        let cfg = moving_disc_cfg();
        let scene = gen_scene(&cfg, 5).unwrap();
        for t in 0..scene.frames.len() - 1 {
            let ma = max_channel(&scene.frames[t]);
            let mb = max_channel(&scene.frames[t + 1]);
            for i in 0..64 {
                for j in 0..64 {
                    let d = (ma.at(i, j) - mb.at(i, j)).abs();
                    if scene.motion_masks[t].at(i, j) {
                        assert!(d > 0.0, "masked pixel ({i},{j}) shows no change at pair {t}");
                    } else {
                        assert_eq!(d, 0.0, "unmasked pixel ({i},{j}) changed at pair {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let mut cfg = SceneConfig::small(0);
        cfg.frames = 8;
        random_blobs(&mut cfg, 2, 15.0, 1.0, 2.0, 9);
        let a = gen_scene(&cfg, 9).unwrap();
        let b = gen_scene(&cfg, 9).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa, fb);
        }
        let c = gen_scene(&cfg, 10).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn mask_area_tracks_analytic_symmetric_difference() {
        // disc of radius r moving d per frame: lens-overlap formula gives
        // area(sym diff) = 2·(πr² − overlap),
        // overlap = 2r²·acos(d/2r) − (d/2)·sqrt(4r² − d²)
        let mut cfg = moving_disc_cfg();
        cfg.blobs[0].velocity = (0.0, 2.0);
        cfg.blobs[0].size = 21.0;
        let scene = gen_scene(&cfg, 6).unwrap();
        let r = 21.0f64 / 2.0;
        let d = 2.0f64;
        let overlap = 2.0 * r * r * (d / (2.0 * r)).acos() - (d / 2.0) * (4.0 * r * r - d * d).sqrt();
        let analytic = 2.0 * (std::f64::consts::PI * r * r - overlap);
        for t in 0..4 {
            let got = scene.motion_masks[t].count() as f64;
            assert!(
                (got - analytic).abs() / analytic < 0.10,
                "pair {t}: rasterized {got} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn bouncing_keeps_blobs_inside() {
        let mut cfg = SceneConfig::small(0);
        cfg.frames = 200;
        cfg.noise_sigma = 0.0;
        cfg.blobs.push(BlobSpec {
            shape: BlobShape::Disc,
            size: 13.0,
            color: [0.9, 0.9, 0.9],
            start: (30.0, 30.0),
            velocity: (2.7, -1.9),
        });
        for t in 0..200 {
            let (ci, cj) = blob_center(&cfg.blobs[0], t, 64.0, 64.0);
            assert!(ci >= 6.5 - 1e-9 && ci <= 57.5 + 1e-9, "t={t}: row {ci}");
            assert!(cj >= 6.5 - 1e-9 && cj <= 57.5 + 1e-9, "t={t}: col {cj}");
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut cfg = SceneConfig::small(0);
        cfg.frames = 1;
        assert!(gen_scene(&cfg, 0).is_err());
        let mut cfg = SceneConfig::small(0);
        cfg.blobs.push(BlobSpec {
            shape: BlobShape::Disc,
            size: 100.0,
            color: [1.0; 3],
            start: (32.0, 32.0),
            velocity: (0.0, 0.0),
        });
        assert!(gen_scene(&cfg, 0).is_err());
    }
}
