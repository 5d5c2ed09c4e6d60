//! Command-line entry point: `dcl synth | ingest | train | eval`.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use dcl::cli;
use dcl::config::RunConfig;

#[derive(Parser)]
#[command(name = "dcl", version, about = "Curiosity-driven per-pixel Q-learning on video shots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Per-key overrides, e.g. `--set train.batch=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground-truth masks and a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build a training manifest from directories of numbered PPM frames.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Source directories, in chronological order.
        #[arg(required = true)]
        sources: Vec<PathBuf>,
    },
    /// Run the curiosity loop over a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Manifest produced by `synth` or `ingest`.
        #[arg(long)]
        manifest: PathBuf,
        /// Resume from checkpoints in this directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained Q-network over a directory of frames.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Q-network checkpoint (`acdqn.ckpt` from `train`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `frame_*.ppm` files.
        #[arg(long)]
        frames: PathBuf,
        /// Optional directory of `mask_*.pgm` ground-truth masks.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
}

fn effective_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common } => {
            let cfg = effective_config(&common)?;
            cli::cmd_synth(&cfg, &common.out)?;
            println!("scene written to {}", common.out.display());
        }
        Command::Ingest { common, sources } => {
            let cfg = effective_config(&common)?;
            cli::cmd_ingest(&sources, &cfg, &common.out)?;
            println!("manifest written to {}", common.out.join("manifest.json").display());
        }
        Command::Train { common, manifest, resume } => {
            let cfg = effective_config(&common)?;
            let output = cli::cmd_train(&manifest, &cfg, &common.out, resume.as_deref())?;
            println!(
                "trained {} transitions; checkpoints in {}",
                output.state.step,
                common.out.display()
            );
        }
        Command::Eval { common, checkpoint, frames, masks } => {
            let cfg = effective_config(&common)?;
            let result = cli::cmd_eval(&checkpoint, &frames, masks.as_deref(), &cfg, &common.out)?;
            match result.auc {
                Some(auc) => println!(
                    "evaluated {} frames; AUC {auc:.4}, threshold {:.4}",
                    result.frames_evaluated,
                    result.chosen_threshold.unwrap_or(f64::NAN)
                ),
                None => println!(
                    "evaluated {} frames (no masks, ROC skipped)",
                    result.frames_evaluated
                ),
            }
        }
    }
    Ok(())
}
