//! The curiosity loop: iterate shots chronologically; for every consecutive
//! frame pair select per-pixel actions ε-greedily from the Q-network, train
//! the forward model on the transition, turn its pre-update prediction error
//! into the reward image, store the transition in prioritized replay, train
//! the Q-network on a sampled batch, sync the target on schedule and emit one
//! metrics record per transition.
//!
//! Order matters: shots are processed strictly in the given order and no
//! transition ever pairs frames from different shots. All randomness is
//! derived from `(seed, stream, global step)`, so a run is reproducible and
//! resumable without serializing generator state.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::acdqn::{self, AcdqnConfig, AcdqnNet, TargetMode, TargetNet, TrainItem};
use crate::error::{DclError, Result};
use crate::learner::{LearnerInit, LearnerNet};
use crate::optim::{AdamParams, SgdParams};
use crate::replay::{PrioritizedBuffer, ReplayConfig, Transition};
use crate::reward::{mean_reward, reward_image};
use crate::rng::{self, Stream};
use crate::tensor::Tensor3f;

/// Everything the loop needs to know; field defaults are the documented
/// configuration defaults.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub seed: u64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of total steps over which ε anneals linearly.
    pub epsilon_fraction: f64,
    pub learner_lr: f64,
    pub learner_momentum: f64,
    pub learner_nesterov: bool,
    pub learner_init: LearnerInit,
    pub acdqn: AcdqnConfig,
    pub acdqn_adam: AdamParams,
    pub replay: ReplayConfig,
    pub beta_start: f64,
    pub beta_end: f64,
    pub batch: usize,
    /// Q-network updates per environment step once the buffer is ready.
    pub updates_per_step: usize,
    /// Target sync period in Q-network train steps.
    pub sync_period: u64,
    /// Reward window; `None` means the Q-network's receptive field.
    pub reward_window: Option<usize>,
    /// Action step size k in pixels.
    pub action_step: usize,
    pub target_mode: TargetMode,
    /// Read the bootstrap value at the action-displaced pixel.
    pub shifted_target: bool,
    /// Train the Q-network once per shot on that shot's transitions instead
    /// of sampling prioritized replay batches.
    pub per_shot_batch: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_fraction: 0.5,
            learner_lr: 0.01,
            learner_momentum: 0.9,
            learner_nesterov: false,
            learner_init: LearnerInit::default(),
            acdqn: AcdqnConfig::default(),
            acdqn_adam: AdamParams::default(),
            replay: ReplayConfig::default(),
            beta_start: 0.4,
            beta_end: 1.0,
            batch: 16,
            updates_per_step: 1,
            sync_period: 200,
            reward_window: None,
            action_step: 1,
            target_mode: TargetMode::Paper,
            shifted_target: false,
            per_shot_batch: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(DclError::Config(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_fraction", self.epsilon_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DclError::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.learner_lr < 0.0 || self.learner_momentum < 0.0 || self.acdqn_adam.lr < 0.0 {
            return Err(DclError::Config("learning rates must be non-negative".into()));
        }
        if let Some(w) = self.reward_window {
            if w % 2 == 0 {
                return Err(DclError::BadWindow(w));
            }
        }
        if self.batch == 0 || self.action_step == 0 {
            return Err(DclError::Config("batch and action step must be positive".into()));
        }
        Ok(())
    }
}

/// One frames-loaded shot.
#[derive(Debug, Clone)]
pub struct ShotFrames {
    pub id: usize,
    pub frames: Vec<Tensor3f>,
}

/// Source of shots for the loop. Implementations load lazily so only one
/// shot's frames are resident at a time.
pub trait ShotProvider {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn shot(&self, idx: usize) -> Result<ShotFrames>;
}

/// Shots already in memory (synthetic scenes, tests).
pub struct MemoryShots(pub Vec<ShotFrames>);

impl ShotProvider for MemoryShots {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn shot(&self, idx: usize) -> Result<ShotFrames> {
        Ok(self.0[idx].clone())
    }
}

/// One record per processed transition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub shot_id: usize,
    pub frame_index: usize,
    pub learner_loss: f64,
    pub mean_reward: f64,
    /// Mean |δ| over the batch of the Q-update at this step, if one ran.
    pub mean_abs_td: Option<f64>,
    pub q_loss: Option<f64>,
    pub epsilon: f64,
    /// Wall-clock milliseconds since the run started. Excluded from
    /// determinism comparisons.
    pub wall_ms: u64,
}

impl MetricsRecord {
    /// Stable projection for determinism checks: everything except wall time.
    pub fn deterministic_line(&self) -> String {
        format!(
            "{} {} {} {:.17e} {:.17e} {:?} {:?} {:.17e}",
            self.step,
            self.shot_id,
            self.frame_index,
            self.learner_loss,
            self.mean_reward,
            self.mean_abs_td,
            self.q_loss,
            self.epsilon
        )
    }
}

/// Mutable state of a run; checkpointable between shots.
pub struct LoopState {
    pub learner: LearnerNet<f32>,
    pub online: AcdqnNet<f32>,
    pub target: TargetNet<f32>,
    /// Global transition counter.
    pub step: u64,
    /// Index of the next shot to process.
    pub next_shot: usize,
    replay: PrioritizedBuffer,
}

impl LoopState {
    pub fn fresh(cfg: &LoopConfig) -> Result<Self> {
        let learner = LearnerNet::init(cfg.seed, cfg.learner_init)?;
        let online = AcdqnNet::init(cfg.seed, &cfg.acdqn)?;
        let target = TargetNet::snapshot(&online);
        Ok(Self {
            learner,
            online,
            target,
            step: 0,
            next_shot: 0,
            replay: PrioritizedBuffer::new(cfg.replay),
        })
    }

    /// Rebuild from restored networks; the replay buffer starts empty (it is
    /// deliberately not persisted) and refills before Q-updates resume.
    pub fn resume(
        cfg: &LoopConfig,
        learner: LearnerNet<f32>,
        online: AcdqnNet<f32>,
        target: TargetNet<f32>,
        step: u64,
        next_shot: usize,
    ) -> Self {
        Self { learner, online, target, step, next_shot, replay: PrioritizedBuffer::new(cfg.replay) }
    }
}

fn linear_anneal(start: f64, end: f64, progress: f64) -> f64 {
    start + (end - start) * progress.clamp(0.0, 1.0)
}

/// ε at a given global step: linear from start to end over the first
/// `epsilon_fraction` of `total_steps`, constant afterwards.
pub fn epsilon_at(cfg: &LoopConfig, step: u64, total_steps: u64) -> f64 {
    let horizon = (total_steps as f64 * cfg.epsilon_fraction).max(1.0);
    linear_anneal(cfg.epsilon_start, cfg.epsilon_end, step as f64 / horizon)
}

/// Importance exponent β at a given step: linear over the whole run.
pub fn beta_at(cfg: &LoopConfig, step: u64, total_steps: u64) -> f64 {
    linear_anneal(cfg.beta_start, cfg.beta_end, step as f64 / total_steps.max(1) as f64)
}

/// Outcome of a completed run.
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub state: LoopState,
}

/// What the run callback observes.
pub enum LoopEvent<'a> {
    /// A transition was processed; the record is about to be kept.
    Transition(&'a MetricsRecord),
    /// A shot finished; `state.next_shot` already points past it, so this is
    /// a clean checkpoint boundary.
    ShotComplete,
}

/// Run the curiosity loop over all shots from `state.next_shot` onward,
/// invoking `on_event` after every transition and at every shot boundary
/// (metrics streaming, checkpointing).
pub fn run_curiosity_loop(
    shots: &dyn ShotProvider,
    cfg: &LoopConfig,
    mut state: LoopState,
    mut on_event: impl FnMut(LoopEvent<'_>, &LoopState) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();

    // total transitions, for the ε/β schedules
    let mut total_steps = 0u64;
    for s in 0..shots.len() {
        let frames = shots.shot(s)?.frames.len() as u64;
        total_steps += frames.saturating_sub(1);
    }

    let sgd = SgdParams {
        lr: cfg.learner_lr,
        momentum: cfg.learner_momentum,
        nesterov: cfg.learner_nesterov,
    };
    let shifted = cfg.shifted_target.then_some(cfg.action_step as isize);
    let window = cfg.reward_window.unwrap_or_else(|| state.online.receptive_field());

    let mut metrics = Vec::new();
    while state.next_shot < shots.len() {
        let shot = shots.shot(state.next_shot)?;
        if shot.frames.len() < 2 {
            log::warn!("shot {} has {} frames, skipping", shot.id, shot.frames.len());
            state.next_shot += 1;
            continue;
        }

        let mut shot_transitions: Vec<Transition> = Vec::new();
        for t in 0..shot.frames.len() - 1 {
            let frame = &shot.frames[t];
            let next = &shot.frames[t + 1];

            let epsilon = epsilon_at(cfg, state.step, total_steps);
            let q = state.online.forward(frame)?;
            let mut action_rng = rng::derived_rng(cfg.seed, Stream::Action, state.step);
            let actions = acdqn::epsilon_greedy(&q, epsilon, &mut action_rng);

            // learner update; the reward uses the pre-update prediction
            let one_hot = actions.one_hot::<f32>();
            let (learner_loss, pred) = state.learner.train_step(frame, &one_hot, next, &sgd)?;
            let reward = reward_image(&pred, next, window)?;
            let r_mean = mean_reward(&reward);

            let transition = Transition {
                frame: frame.clone(),
                actions,
                reward,
                next_frame: next.clone(),
            };

            let mut mean_abs_td = None;
            let mut q_loss = None;
            if cfg.per_shot_batch {
                shot_transitions.push(transition);
            } else {
                state.replay.push(transition)?;
                if state.replay.len() >= cfg.batch {
                    let beta = beta_at(cfg, state.step, total_steps);
                    for u in 0..cfg.updates_per_step {
                        let mut replay_rng = rng::derived_rng(
                            cfg.seed,
                            Stream::Replay,
                            state.step * cfg.updates_per_step as u64 + u as u64,
                        );
                        let batch = state.replay.sample(cfg.batch, beta, &mut replay_rng)?;
                        let items: Vec<TrainItem<'_, f32>> = batch
                            .items
                            .iter()
                            .map(|t| TrainItem {
                                frame: &t.frame,
                                actions: &t.actions,
                                reward: &t.reward,
                                next_frame: &t.next_frame,
                            })
                            .collect();
                        let (loss, deltas) = state.online.train_batch(
                            &state.target,
                            &items,
                            Some(&batch.weights),
                            cfg.gamma,
                            cfg.target_mode,
                            shifted,
                            &cfg.acdqn_adam,
                        )?;
                        state.replay.update_priorities(&batch.indices, &deltas)?;
                        mean_abs_td =
                            Some(deltas.iter().sum::<f64>() / deltas.len() as f64);
                        q_loss = Some(loss);
                        if state.online.step_count() % cfg.sync_period == 0 {
                            state.target.sync(&state.online);
                        }
                    }
                }
            }

            let record = MetricsRecord {
                step: state.step,
                shot_id: shot.id,
                frame_index: t,
                learner_loss,
                mean_reward: r_mean,
                mean_abs_td,
                q_loss,
                epsilon,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            if !record.learner_loss.is_finite() || !record.mean_reward.is_finite() {
                return Err(DclError::NonFinite("metrics record"));
            }
            state.step += 1;
            on_event(LoopEvent::Transition(&record), &state)?;
            metrics.push(record);
        }

        // per-shot mode: one update on the whole shot at the shot boundary
        if cfg.per_shot_batch && !shot_transitions.is_empty() {
            let items: Vec<TrainItem<'_, f32>> = shot_transitions
                .iter()
                .map(|t| TrainItem {
                    frame: &t.frame,
                    actions: &t.actions,
                    reward: &t.reward,
                    next_frame: &t.next_frame,
                })
                .collect();
            let (loss, deltas) = state.online.train_batch(
                &state.target,
                &items,
                None,
                cfg.gamma,
                cfg.target_mode,
                shifted,
                &cfg.acdqn_adam,
            )?;
            if let Some(last) = metrics.last_mut() {
                last.q_loss = Some(loss);
                last.mean_abs_td = Some(deltas.iter().sum::<f64>() / deltas.len() as f64);
            }
            if state.online.step_count() % cfg.sync_period == 0 {
                state.target.sync(&state.online);
            }
        }

        state.next_shot += 1;
        on_event(LoopEvent::ShotComplete, &state)?;
    }

    Ok(RunOutput { metrics, state })
}
