// scratch prototyping for the full-loop AUC run; removed before final
use std::time::Instant;

use dcl::acdqn::{value_image, AcdqnConfig, NetPreset};
use dcl::eval::{quantile_thresholds, roc_curve, Mask};
use dcl::learner::LearnerInit;
use dcl::replay::ReplayConfig;
use dcl::synth::{gen_scene, random_blobs, SceneConfig, SceneData};
use dcl::tensor::Map2f;
use dcl::training::{run_curiosity_loop, LoopConfig, LoopState, MemoryShots, ShotFrames};

fn corpus(seed: u64, scenes: usize, frames_per_scene: usize) -> (MemoryShots, Vec<SceneData>) {
    let mut shots = Vec::new();
    let mut data = Vec::new();
    for s in 0..scenes {
        let mut sc = SceneConfig::small(0);
        sc.frames = frames_per_scene;
        let blobs = 1 + (s % 2);
        random_blobs(&mut sc, blobs, 15.0, 2.0, 4.0, seed * 1000 + s as u64);
        let scene = gen_scene(&sc, seed * 1000 + s as u64).unwrap();
        let per = frames_per_scene / 32;
        for k in 0..per {
            shots.push(ShotFrames {
                id: shots.len(),
                frames: scene.frames[k * 32..(k + 1) * 32].to_vec(),
            });
        }
        data.push(scene);
    }
    (MemoryShots(shots), data)
}

#[test]
#[ignore]
fn proto_full_loop_auc() {
    let seed = 1u64;
    let t0 = Instant::now();
    let (shots, scenes) = corpus(seed, 20, 64);
    println!("corpus: {} shots, {:.1?}", shots.0.len(), t0.elapsed());

    let cfg = LoopConfig {
        seed,
        gamma: 0.8,
        epsilon_start: 1.0,
        epsilon_end: 0.1,
        epsilon_fraction: 0.5,
        learner_lr: 0.05,
        learner_momentum: 0.9,
        learner_nesterov: false,
        learner_init: LearnerInit::default(),
        acdqn: AcdqnConfig {
            init_std: 0.05,
            init_mean: 0.0,
            ..AcdqnConfig::preset(NetPreset::Reduced)
        },
        acdqn_adam: dcl::optim::AdamParams { lr: 1e-3, ..Default::default() },
        replay: ReplayConfig { capacity: 512, alpha: 0.6, priority_floor: 1e-6 },
        beta_start: 0.4,
        beta_end: 1.0,
        batch: 8,
        updates_per_step: 1,
        sync_period: 50,
        reward_window: Some(9),
        action_step: 1,
        target_mode: dcl::acdqn::TargetMode::Paper,
        shifted_target: false,
        per_shot_batch: false,
    };

    let t1 = Instant::now();
    let state = LoopState::fresh(&cfg).unwrap();
    let out = run_curiosity_loop(&shots, &cfg, state, |_, _| Ok(())).unwrap();
    println!(
        "loop: {} transitions in {:.1?} ({:.0} ms/step)",
        out.state.step,
        t1.elapsed(),
        t1.elapsed().as_millis() as f64 / out.state.step as f64
    );
    let tail: Vec<f64> =
        out.metrics.iter().rev().take(50).map(|m| m.learner_loss).collect();
    println!(
        "late learner loss {:.2e}, late mean reward {:.2e}",
        tail.iter().sum::<f64>() / 50.0,
        out.metrics.iter().rev().take(50).map(|m| m.mean_reward).sum::<f64>() / 50.0
    );

    // pooled ROC over sampled frames from every scene
    let t2 = Instant::now();
    let mut values: Vec<Map2f> = Vec::new();
    let mut truth: Vec<Mask> = Vec::new();
    for scene in &scenes {
        for t in (4..60).step_by(8) {
            let q = out.state.online.forward(&scene.frames[t]).unwrap();
            values.push(value_image(&q));
            truth.push(scene.motion_masks[t].clone());
        }
    }
    let thresholds = quantile_thresholds(&values, 201);
    let (_, auc) = roc_curve(&values, &truth, &thresholds).unwrap();
    println!("eval: {} frames in {:.1?}; AUC = {auc:.4}", values.len(), t2.elapsed());
    println!("total {:.1?}", t0.elapsed());
}
