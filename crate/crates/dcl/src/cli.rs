//! Command implementations behind the `dcl` binary: `synth`, `ingest`,
//! `train` and `eval`. Each command is deterministic given its configuration
//! and seed, writes its artifacts under the chosen output directory, and
//! writes the effective configuration alongside them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::acdqn::{value_image, AcdqnNet};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{DclError, Result};
use crate::eval::{
    flow_field, grid_thresholds, local_maxima_boxes, pick_threshold, quantile_thresholds,
    roc_curve, threshold_mask, write_boxes_csv, write_flow_csv, write_roc_csv, youden, Mask,
};
use crate::imageio;
use crate::ingest::{self, IngestConfig, Manifest, Shot};
use crate::synth::{gen_scene, random_blobs, SceneConfig};
use crate::tensor::{Map2f, Tensor3f};
use crate::training::{
    run_curiosity_loop, LoopEvent, LoopState, MemoryShots, RunOutput, ShotFrames, ShotProvider,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_effective_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(out.join("config.txt"), cfg.render())?;
    Ok(())
}

fn scene_config(cfg: &RunConfig) -> SceneConfig {
    let mut scene = SceneConfig {
        height: cfg.synth_height,
        width: cfg.synth_width,
        frames: cfg.synth_frames,
        blobs: Vec::new(),
        background_cell: cfg.synth_background_cell,
        background_contrast: cfg.synth_background_contrast,
        noise_sigma: cfg.synth_noise_sigma,
    };
    random_blobs(
        &mut scene,
        cfg.synth_blobs,
        cfg.synth_blob_diameter,
        cfg.synth_min_speed,
        cfg.synth_max_speed,
        cfg.seed,
    );
    scene
}

/// Generate a synthetic scene and persist it in the same layout `ingest`
/// produces: numbered frames, a chronological manifest, plus ground-truth
/// motion and region masks.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let frames_dir = out.join("frames");
    let masks_dir = out.join("masks");
    let regions_dir = out.join("regions");
    ensure_dir(&frames_dir)?;
    ensure_dir(&masks_dir)?;
    ensure_dir(&regions_dir)?;

    let scene = scene_config(cfg);
    let data = gen_scene(&scene, cfg.seed)?;

    for (t, frame) in data.frames.iter().enumerate() {
        imageio::save_ppm(&frames_dir.join(format!("frame_{t:06}.ppm")), frame)?;
    }
    for (t, mask) in data.motion_masks.iter().enumerate() {
        imageio::save_mask_pgm(&masks_dir.join(format!("mask_{t:06}.pgm")), mask)?;
    }
    for (t, mask) in data.region_masks.iter().enumerate() {
        imageio::save_mask_pgm(&regions_dir.join(format!("region_{t:06}.pgm")), mask)?;
    }

    // scene frames are already at target size and contain no cuts, so the
    // shot structure is pure chunking; reuse the ingest segmentation
    let mut icfg = cfg.ingest_config();
    icfg.target_height = scene.height;
    icfg.target_width = scene.width;
    icfg.border_width = icfg.border_width.min(scene.height.min(scene.width) / 2 - 1).max(1);
    let ranges = ingest::segment_shots(&data.frames, &icfg)?;
    if ranges.is_empty() {
        return Err(DclError::NoShots("scene too short for one shot".into()));
    }
    let shots = ranges
        .iter()
        .enumerate()
        .map(|(id, &(start, len))| Shot {
            id,
            source: 0,
            frames: (start..start + len)
                .map(|t| PathBuf::from(format!("frames/frame_{t:06}.ppm")))
                .collect(),
        })
        .collect();
    let manifest = Manifest { config: icfg, sources: vec![frames_dir], shots };
    manifest.save(&out.join("manifest.json"))?;
    write_effective_config(out, cfg)?;
    Ok(())
}

/// Ingest frame directories: resize, downsample the frame rate, segment into
/// shots, re-emit the kept frames and write the chronological manifest.
pub fn cmd_ingest(src_dirs: &[PathBuf], cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let icfg = cfg.ingest_config();
    icfg.validate()?;

    let mut manifest_shots: Vec<Shot> = Vec::new();
    let mut sources = Vec::new();
    for (src_idx, src) in src_dirs.iter().enumerate() {
        let files = ingest::list_frame_files(src)?;
        let kept = ingest::downsample_indices(files.len(), icfg.src_fps, icfg.dst_fps)?;
        let mut frames = Vec::with_capacity(kept.len());
        for &fi in &kept {
            let img = imageio::load_ppm(&files[fi])?;
            frames.push(ingest::resize_bilinear(&img, icfg.target_height, icfg.target_width));
        }
        let ranges = ingest::segment_shots(&frames, &icfg)?;

        let src_out = out.join(format!("frames_{src_idx:03}"));
        ensure_dir(&src_out)?;
        for &(start, len) in &ranges {
            let id = manifest_shots.len();
            let mut shot_frames = Vec::with_capacity(len);
            for k in 0..len {
                let rel = PathBuf::from(format!("frames_{src_idx:03}/frame_{:06}.ppm", start + k));
                imageio::save_ppm(&out.join(&rel), &frames[start + k])?;
                shot_frames.push(rel);
            }
            manifest_shots.push(Shot { id, source: src_idx, frames: shot_frames });
        }
        sources.push(src.clone());
    }

    if manifest_shots.is_empty() {
        return Err(DclError::NoShots(format!(
            "no run of {} stable frames in {} source(s)",
            icfg.min_shot_frames,
            src_dirs.len()
        )));
    }
    let manifest = Manifest { config: icfg, sources, shots: manifest_shots };
    manifest.save(&out.join("manifest.json"))?;
    write_effective_config(out, cfg)?;
    Ok(())
}

/// Shot provider that loads frames from manifest paths on demand.
pub struct ManifestShots {
    base: PathBuf,
    shots: Vec<Shot>,
}

impl ManifestShots {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self { base, shots: manifest.shots })
    }
}

impl ShotProvider for ManifestShots {
    fn len(&self) -> usize {
        self.shots.len()
    }

    fn shot(&self, idx: usize) -> Result<ShotFrames> {
        let shot = &self.shots[idx];
        let mut frames = Vec::with_capacity(shot.frames.len());
        for rel in &shot.frames {
            let path = if rel.is_absolute() { rel.clone() } else { self.base.join(rel) };
            frames.push(imageio::load_ppm(&path)?);
        }
        Ok(ShotFrames { id: shot.id, frames })
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TrainState {
    step: u64,
    next_shot: usize,
    seed: u64,
}

fn write_checkpoints(out: &Path, state: &LoopState) -> Result<()> {
    checkpoint::save_learner(&out.join("learner.ckpt"), &state.learner)?;
    checkpoint::save_acdqn(&out.join("acdqn.ckpt"), &state.online)?;
    checkpoint::save_target(
        &out.join("target.ckpt"),
        &state.target,
        state.online.use_norm(),
        state.online.norm_eps(),
    )?;
    Ok(())
}

fn write_state_json(out: &Path, state: &LoopState, seed: u64) -> Result<()> {
    let ts = TrainState { step: state.step, next_shot: state.next_shot, seed };
    fs::write(out.join("state.json"), serde_json::to_string_pretty(&ts)?)?;
    Ok(())
}

/// Run the curiosity loop over a manifest. Checkpoints land in `out` every
/// `train.checkpoint_every` transitions (at shot boundaries), at exit, and on
/// abort; metrics stream to `out/metrics.jsonl`, one JSON record per line.
pub fn cmd_train(
    manifest_path: &Path,
    cfg: &RunConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<RunOutput> {
    ensure_dir(out)?;
    let shots = ManifestShots::open(manifest_path)?;
    let loop_cfg = cfg.loop_config()?;

    let state = match resume {
        None => LoopState::fresh(&loop_cfg)?,
        Some(dir) => {
            let ts: TrainState = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)?;
            if ts.seed != cfg.seed {
                return Err(DclError::Config(format!(
                    "checkpoint was written with seed {}, run uses {}",
                    ts.seed, cfg.seed
                )));
            }
            LoopState::resume(
                &loop_cfg,
                checkpoint::load_learner(&dir.join("learner.ckpt"))?,
                checkpoint::load_acdqn(&dir.join("acdqn.ckpt"))?,
                checkpoint::load_target(&dir.join("target.ckpt"))?,
                ts.step,
                ts.next_shot,
            )
        }
    };

    let mut opts = fs::OpenOptions::new();
    if resume.is_some() {
        opts.create(true).append(true);
    } else {
        opts.create(true).write(true).truncate(true);
    }
    let mut metrics_file = opts.open(out.join("metrics.jsonl"))?;
    let mut last_ckpt_step = state.step;

    let result = run_curiosity_loop(&shots, &loop_cfg, state, |event, state| match event {
        LoopEvent::Transition(record) => {
            writeln!(metrics_file, "{}", serde_json::to_string(record)?)?;
            Ok(())
        }
        LoopEvent::ShotComplete => {
            if state.step - last_ckpt_step >= cfg.train_checkpoint_every {
                write_checkpoints(out, state)?;
                write_state_json(out, state, cfg.seed)?;
                last_ckpt_step = state.step;
            }
            Ok(())
        }
    });

    let output = result?;
    write_checkpoints(out, &output.state)?;
    write_state_json(out, &output.state, cfg.seed)?;
    write_effective_config(out, cfg)?;
    Ok(output)
}

fn indexed_files(dir: &Path, prefix: &str, ext: &str) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s,
            None => continue,
        };
        if path.extension().map_or(true, |e| e != ext) {
            continue;
        }
        if let Some(num) = stem.strip_prefix(prefix) {
            if let Ok(idx) = num.parse::<usize>() {
                out.insert(idx, path);
            }
        }
    }
    Ok(out)
}

/// Per-frame outputs of `eval`, plus the ROC summary when masks were given.
pub struct EvalOutput {
    pub frames_evaluated: usize,
    pub auc: Option<f64>,
    pub chosen_threshold: Option<f64>,
}

/// Evaluate a trained Q-network over a directory of frames: value images,
/// detection boxes and flow fields always; pooled ROC/AUC, the Youden-optimal
/// threshold and predicted masks when ground-truth masks are supplied.
pub fn cmd_eval(
    ckpt: &Path,
    frames_dir: &Path,
    masks_dir: Option<&Path>,
    cfg: &RunConfig,
    out: &Path,
) -> Result<EvalOutput> {
    ensure_dir(out)?;
    let net: AcdqnNet<f32> = checkpoint::load_acdqn(ckpt)?;

    let frame_files = indexed_files(frames_dir, "frame_", "ppm")?;
    if frame_files.is_empty() {
        return Err(DclError::Eval(format!("no frame_*.ppm files in {}", frames_dir.display())));
    }
    let mask_files = match masks_dir {
        Some(dir) => indexed_files(dir, "mask_", "pgm")?,
        None => BTreeMap::new(),
    };

    let mut values: Vec<Map2f> = Vec::new();
    let mut indices: Vec<usize> = Vec::new();
    for (&idx, path) in &frame_files {
        let frame: Tensor3f = imageio::load_ppm(path)?;
        let q = net.forward(&frame)?;
        let v = value_image(&q);

        imageio::save_map_pgm(&out.join(format!("value_{idx:06}.pgm")), &v)?;
        let boxes = local_maxima_boxes(
            &v,
            cfg.eval_box_min_dist,
            cfg.eval_box_size,
            frame.height(),
            frame.width(),
        );
        write_boxes_csv(&out.join(format!("boxes_{idx:06}.csv")), &boxes)?;
        let flow = flow_field(&q, cfg.train_action_step as isize);
        write_flow_csv(&out.join(format!("flow_{idx:06}.csv")), &flow)?;

        values.push(v);
        indices.push(idx);
    }

    let mut auc_out = None;
    let mut chosen = None;
    if masks_dir.is_some() {
        let mut paired_values: Vec<Map2f> = Vec::new();
        let mut truth: Vec<Mask> = Vec::new();
        for (v, &idx) in values.iter().zip(&indices) {
            if let Some(mask_path) = mask_files.get(&idx) {
                paired_values.push(v.clone());
                truth.push(imageio::load_mask_pgm(mask_path)?);
            }
        }
        if truth.is_empty() {
            return Err(DclError::Eval("mask directory has no mask matching any frame".into()));
        }
        let thresholds = match cfg.eval_threshold_mode.as_str() {
            "grid" => grid_thresholds(
                cfg.eval_threshold_min,
                cfg.eval_threshold_max,
                cfg.eval_threshold_count,
            ),
            "auto" => quantile_thresholds(&paired_values, cfg.eval_threshold_count),
            other => {
                return Err(DclError::Config(format!("unknown eval.threshold_mode {other:?}")))
            }
        };
        let (points, auc) = roc_curve(&paired_values, &truth, &thresholds)?;
        write_roc_csv(&out.join("roc.csv"), &points, auc)?;

        let best = pick_threshold(&points, cfg.eval_youden_tpr_weight, cfg.eval_youden_fpr_weight)
            .ok_or_else(|| DclError::Eval("empty ROC".into()))?;
        for (v, &idx) in values.iter().zip(&indices) {
            let mask = threshold_mask(v, best.threshold);
            imageio::save_mask_pgm(&out.join(format!("pred_mask_{idx:06}.pgm")), &mask)?;
        }
        let summary = serde_json::json!({
            "auc": auc,
            "threshold": best.threshold,
            "tpr": best.tpr,
            "fpr": best.fpr,
            "youden": youden(best.tpr, best.fpr, cfg.eval_youden_tpr_weight, cfg.eval_youden_fpr_weight),
            "frames": paired_values.len(),
        });
        fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        auc_out = Some(auc);
        chosen = Some(best.threshold);
    }

    write_effective_config(out, cfg)?;
    Ok(EvalOutput { frames_evaluated: values.len(), auc: auc_out, chosen_threshold: chosen })
}

/// In-memory provider for a generated scene, used by tests and the
/// acceptance suite to avoid disk round-trips.
pub fn scene_provider(cfg: &RunConfig) -> Result<(MemoryShots, crate::synth::SceneData)> {
    let scene = scene_config(cfg);
    let data = gen_scene(&scene, cfg.seed)?;
    let mut icfg = cfg.ingest_config();
    icfg.target_height = scene.height;
    icfg.target_width = scene.width;
    icfg.border_width = icfg.border_width.min(scene.height.min(scene.width) / 2 - 1).max(1);
    let ranges = ingest::segment_shots(&data.frames, &icfg)?;
    let shots = ranges
        .iter()
        .enumerate()
        .map(|(id, &(start, len))| ShotFrames {
            id,
            frames: data.frames[start..start + len].to_vec(),
        })
        .collect();
    Ok((MemoryShots(shots), data))
}

/// Ingest configuration actually used for synthetic scenes (what
/// [`cmd_synth`] writes into its manifest).
pub fn synth_ingest_config(cfg: &RunConfig) -> IngestConfig {
    let mut icfg = cfg.ingest_config();
    icfg.target_height = cfg.synth_height;
    icfg.target_width = cfg.synth_width;
    icfg.border_width = icfg.border_width.min(cfg.synth_height.min(cfg.synth_width) / 2 - 1).max(1);
    icfg
}
