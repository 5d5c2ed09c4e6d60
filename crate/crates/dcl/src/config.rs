//! Flat `key = value` run configuration: one namespace for the scene
//! generator, ingestion, training loop and evaluation, loadable from a UTF-8
//! file with `--set key=value` overrides on top. Unknown keys are rejected;
//! every key has a default, and the effective configuration can be written
//! back out for reproducibility.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::acdqn::{AcdqnConfig, NetPreset, TargetMode};
use crate::error::{DclError, Result};
use crate::ingest::IngestConfig;
use crate::learner::LearnerInit;
use crate::optim::AdamParams;
use crate::replay::ReplayConfig;
use crate::training::LoopConfig;

macro_rules! config_keys {
    ($(($field:ident, $key:literal, $ty:ty, $default:expr, $doc:literal)),+ $(,)?) => {
        /// Every tunable in one flat struct.
        #[derive(Debug, Clone)]
        pub struct RunConfig {
            $(pub $field: $ty),+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default),+ }
            }
        }

        impl RunConfig {
            fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            DclError::Config(format!("cannot parse {key} = {value:?}"))
                        })?;
                    })+
                    _ => return Err(DclError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// The effective configuration as a parseable document, one
            /// `key = value` line each, with doc comments.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(
                    let _ = writeln!(out, "# {}", $doc);
                    let _ = writeln!(out, "{} = {}", $key, self.$field);
                    let _ = writeln!(out);
                )+
                out
            }

            /// `(key, doc, default)` for every known key.
            pub fn documented_keys() -> Vec<(&'static str, &'static str, String)> {
                let d = RunConfig::default();
                vec![$(($key, $doc, d.$field.to_string())),+]
            }
        }
    };
}

config_keys![
    (seed, "seed", u64, 0, "root seed; every random draw derives from it"),
    // synthetic scenes
    (synth_height, "synth.height", usize, 64, "scene height in pixels"),
    (synth_width, "synth.width", usize, 64, "scene width in pixels"),
    (synth_frames, "synth.frames", usize, 64, "frames per generated scene"),
    (synth_blobs, "synth.blobs", usize, 2, "number of moving blobs"),
    (synth_blob_diameter, "synth.blob_diameter", f64, 21.0, "blob diameter in pixels"),
    (synth_min_speed, "synth.min_speed", f64, 1.0, "minimum blob speed, pixels per frame"),
    (synth_max_speed, "synth.max_speed", f64, 3.0, "maximum blob speed, pixels per frame"),
    (synth_noise_sigma, "synth.noise_sigma", f64, 0.005, "per-pixel gaussian noise sigma"),
    (synth_background_cell, "synth.background_cell", usize, 8, "background value-noise cell size"),
    (
        synth_background_contrast,
        "synth.background_contrast",
        f64,
        0.05,
        "background texture contrast"
    ),
    // ingestion
    (ingest_height, "ingest.height", usize, 180, "target frame height"),
    (ingest_width, "ingest.width", usize, 320, "target frame width"),
    (ingest_src_fps, "ingest.src_fps", usize, 5, "frame rate of the source directories"),
    (ingest_dst_fps, "ingest.dst_fps", usize, 5, "frame rate after downsampling"),
    (ingest_border_width, "ingest.border_width", usize, 10, "border band width for cut detection"),
    (
        ingest_turnover_threshold,
        "ingest.turnover_threshold",
        f64,
        0.25,
        "border turnover fraction that declares a cut"
    ),
    (
        ingest_pixel_threshold,
        "ingest.pixel_threshold",
        f64,
        0.1,
        "max-channel change that counts a border pixel as turned over"
    ),
    (ingest_min_shot, "ingest.min_shot", usize, 20, "minimum frames per shot"),
    (ingest_max_shot, "ingest.max_shot", usize, 32, "maximum frames per shot"),
    // forward model
    (learner_init_mean, "learner.init_mean", f64, 1e-4, "truncated-normal init mean"),
    (learner_init_std, "learner.init_std", f64, 1e-8, "truncated-normal init std"),
    (learner_lr, "learner.lr", f64, 0.01, "SGD learning rate"),
    (learner_momentum, "learner.momentum", f64, 0.9, "SGD momentum coefficient"),
    (learner_nesterov, "learner.nesterov", bool, false, "use the Nesterov momentum variant"),
    // Q-network
    (acdqn_preset, "acdqn.preset", String, "full".to_string(), "layer stack: full or reduced"),
    (acdqn_norm, "acdqn.norm", bool, true, "instance-normalize hidden layers"),
    (acdqn_norm_eps, "acdqn.norm_eps", f64, 1e-5, "instance norm epsilon"),
    (acdqn_init_mean, "acdqn.init_mean", f64, 1e-4, "truncated-normal init mean"),
    (acdqn_init_std, "acdqn.init_std", f64, 1e-8, "truncated-normal init std"),
    (acdqn_lr, "acdqn.lr", f64, 1e-3, "Adam learning rate"),
    // loop
    (train_gamma, "train.gamma", f64, 0.9, "discount factor"),
    (train_epsilon_start, "train.epsilon_start", f64, 1.0, "initial exploration rate"),
    (train_epsilon_end, "train.epsilon_end", f64, 0.1, "final exploration rate"),
    (
        train_epsilon_fraction,
        "train.epsilon_fraction",
        f64,
        0.5,
        "fraction of the run over which epsilon anneals"
    ),
    (train_action_step, "train.action_step", usize, 1, "action step size k in pixels"),
    (
        train_reward_window,
        "train.reward_window",
        usize,
        0,
        "reward averaging window; 0 means the Q-network receptive field"
    ),
    (
        train_target_mode,
        "train.target_mode",
        String,
        "paper".to_string(),
        "TD bootstrap: paper (max through target net) or ddqn"
    ),
    (
        train_shifted_target,
        "train.shifted_target",
        bool,
        false,
        "read the bootstrap value at the action-displaced pixel"
    ),
    (train_sync_period, "train.sync_period", u64, 200, "target sync period in Q train steps"),
    (train_replay_capacity, "train.replay_capacity", usize, 4096, "replay buffer capacity"),
    (train_replay_alpha, "train.replay_alpha", f64, 0.6, "priority exponent alpha"),
    (train_beta_start, "train.beta_start", f64, 0.4, "importance exponent beta, start"),
    (train_beta_end, "train.beta_end", f64, 1.0, "importance exponent beta, end"),
    (train_batch, "train.batch", usize, 16, "replay batch size"),
    (
        train_updates_per_step,
        "train.updates_per_step",
        usize,
        1,
        "Q-network updates per environment step"
    ),
    (
        train_per_shot_batch,
        "train.per_shot_batch",
        bool,
        false,
        "train once per shot on its own transitions instead of replay"
    ),
    (
        train_checkpoint_every,
        "train.checkpoint_every",
        u64,
        1000,
        "write checkpoints every N transitions"
    ),
    // evaluation
    (
        eval_threshold_mode,
        "eval.threshold_mode",
        String,
        "grid".to_string(),
        "ROC thresholds: grid (fixed range) or auto (score quantiles)"
    ),
    (eval_threshold_min, "eval.threshold_min", f64, -0.1, "grid threshold minimum"),
    (eval_threshold_max, "eval.threshold_max", f64, 0.5, "grid threshold maximum"),
    (eval_threshold_count, "eval.threshold_count", usize, 61, "number of thresholds"),
    (eval_box_min_dist, "eval.box_min_dist", usize, 22, "peak suppression distance"),
    (eval_box_size, "eval.box_size", usize, 45, "detection box side length, model pixels"),
    (eval_youden_tpr_weight, "eval.youden_tpr_weight", f64, 1.0, "Youden TPR weight"),
    (eval_youden_fpr_weight, "eval.youden_fpr_weight", f64, 1.0, "Youden FPR weight"),
];

impl RunConfig {
    /// Parse a config document: `key = value` lines, `#` comments, blank
    /// lines. Later lines win; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DclError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Apply `--set key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| DclError::Config(format!("override {o:?} is not key=value")))?;
            self.set_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn net_preset(&self) -> Result<NetPreset> {
        match self.acdqn_preset.as_str() {
            "full" => Ok(NetPreset::Full),
            "reduced" => Ok(NetPreset::Reduced),
            other => Err(DclError::Config(format!("unknown acdqn.preset {other:?}"))),
        }
    }

    pub fn target_mode(&self) -> Result<TargetMode> {
        match self.train_target_mode.as_str() {
            "paper" => Ok(TargetMode::Paper),
            "ddqn" => Ok(TargetMode::Ddqn),
            other => Err(DclError::Config(format!("unknown train.target_mode {other:?}"))),
        }
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            target_height: self.ingest_height,
            target_width: self.ingest_width,
            src_fps: self.ingest_src_fps,
            dst_fps: self.ingest_dst_fps,
            border_width: self.ingest_border_width,
            turnover_threshold: self.ingest_turnover_threshold,
            pixel_threshold: self.ingest_pixel_threshold,
            min_shot_frames: self.ingest_min_shot,
            max_shot_frames: self.ingest_max_shot,
        }
    }

    pub fn acdqn_config(&self) -> Result<AcdqnConfig> {
        Ok(AcdqnConfig {
            layers: self.net_preset()?.layer_shapes(),
            use_norm: self.acdqn_norm,
            norm_eps: self.acdqn_norm_eps,
            init_mean: self.acdqn_init_mean,
            init_std: self.acdqn_init_std,
        })
    }

    pub fn loop_config(&self) -> Result<LoopConfig> {
        let cfg = LoopConfig {
            seed: self.seed,
            gamma: self.train_gamma,
            epsilon_start: self.train_epsilon_start,
            epsilon_end: self.train_epsilon_end,
            epsilon_fraction: self.train_epsilon_fraction,
            learner_lr: self.learner_lr,
            learner_momentum: self.learner_momentum,
            learner_nesterov: self.learner_nesterov,
            learner_init: LearnerInit { mean: self.learner_init_mean, std: self.learner_init_std },
            acdqn: self.acdqn_config()?,
            acdqn_adam: AdamParams { lr: self.acdqn_lr, ..AdamParams::default() },
            replay: ReplayConfig {
                capacity: self.train_replay_capacity,
                alpha: self.train_replay_alpha,
                priority_floor: 1e-6,
            },
            beta_start: self.train_beta_start,
            beta_end: self.train_beta_end,
            batch: self.train_batch,
            updates_per_step: self.train_updates_per_step,
            sync_period: self.train_sync_period,
            reward_window: if self.train_reward_window == 0 {
                None
            } else {
                Some(self.train_reward_window)
            },
            action_step: self.train_action_step,
            target_mode: self.target_mode()?,
            shifted_target: self.train_shifted_target,
            per_shot_batch: self.train_per_shot_batch,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys and values that differ from the defaults, for compact logging.
    pub fn diff_from_default(&self) -> BTreeMap<&'static str, String> {
        let mut out = BTreeMap::new();
        let rendered = self.render();
        let default = RunConfig::default().render();
        for (line, dline) in rendered.lines().zip(default.lines()) {
            if line != dline && !line.starts_with('#') && !line.is_empty() {
                if let Some((k, v)) = line.split_once(" = ") {
                    let key = RunConfig::documented_keys()
                        .iter()
                        .map(|(k, _, _)| *k)
                        .find(|known| *known == k);
                    if let Some(key) = key {
                        out.insert(key, v.to_string());
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_reparse() {
        let cfg = RunConfig::default();
        let text = cfg.render();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back.render(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("no.such.key = 5");
        assert!(matches!(err, Err(DclError::Config(_))));
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("train.batch = banana").is_err());
        assert!(cfg.apply_text("train.batch").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("train.batch = 8\ntrain.gamma = 0.5").unwrap();
        cfg.apply_overrides(&["train.batch=4".to_string()]).unwrap();
        assert_eq!(cfg.train_batch, 4);
        assert_eq!(cfg.train_gamma, 0.5);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# a comment\n\n  seed = 42  \n").unwrap();
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn loop_config_maps_fields() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "acdqn.preset = reduced\ntrain.reward_window = 0\ntrain.target_mode = ddqn",
        )
        .unwrap();
        let lc = cfg.loop_config().unwrap();
        assert_eq!(lc.acdqn.layers.len(), 3);
        assert!(lc.reward_window.is_none());
        assert_eq!(lc.target_mode, TargetMode::Ddqn);

        cfg.apply_text("train.target_mode = nonsense").unwrap();
        assert!(cfg.loop_config().is_err());
    }

    #[test]
    fn every_key_has_documentation() {
        for (key, doc, default) in RunConfig::documented_keys() {
            assert!(!doc.is_empty(), "{key} lacks documentation");
            assert!(!default.is_empty(), "{key} lacks a default");
        }
    }

    #[test]
    fn diff_from_default_reports_changes() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("train.batch = 4").unwrap();
        let diff = cfg.diff_from_default();
        assert_eq!(diff.get("train.batch").map(String::as_str), Some("4"));
        assert_eq!(diff.len(), 1);
    }
}
