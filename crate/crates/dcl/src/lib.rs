//! Deep curiosity loop: a forward-model learner whose per-pixel prediction
//! error becomes the intrinsic reward for an action-convolution deep Q-network.
//!
//! The pipeline runs over chronologically ordered video *shots* (camera-stable
//! frame runs). For every consecutive frame pair the loop selects a per-pixel
//! action matrix ε-greedily, trains the forward model on the transition, turns
//! its prediction error into a reward image, and trains the Q-network on
//! prioritized replay batches. After training, the per-pixel value image
//! `V = max_a Q` acts as an unsupervised motion-salience detector and the
//! greedy per-pixel actions form an "optical flow" field pointing at the
//! informative regions of the scene.
//!
//! Module map:
//! - [`tensor`], [`ops`], [`optim`]: dense tensor math the networks are built
//!   from (same-size conv2d with exact backward, instance norm, ReLU, box
//!   mean filter, SGD-momentum and Adam).
//! - [`learner`]: the single-layer convolutional forward model.
//! - [`reward`]: prediction error → per-pixel reward image.
//! - [`replay`]: prioritized experience replay over a sum tree.
//! - [`acdqn`]: the 10-layer fully convolutional Q-network.
//! - [`training`]: the curiosity loop orchestrator.
//! - [`ingest`], [`synth`]: corpus construction from frame directories and
//!   deterministic synthetic scenes.
//! - [`eval`]: value masks, ROC/AUC, Youden thresholds, bounding boxes,
//!   change-concentration statistics and flow export.
//! - [`config`], [`checkpoint`], [`cli`]: run configuration, weight files and
//!   the command-line surface.

pub mod acdqn;
pub mod action;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod ingest;
pub mod learner;
pub mod ops;
pub mod optim;
pub mod replay;
pub mod reward;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{DclError, Result};
pub use tensor::{Kernel4, Map2, Map2f, Scalar, Tensor3, Tensor3f};
