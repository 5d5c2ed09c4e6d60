//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DclError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("channel mismatch: input has {input} channels, kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },

    #[error("kernel dimensions must be odd, got {kh}x{kw}")]
    EvenKernel { kh: usize, kw: usize },

    #[error("window size must be odd and positive, got {0}")]
    BadWindow(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("replay buffer holds {size} transitions, need at least {need}")]
    UnderfullBuffer { size: usize, need: usize },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("frame {h}x{w} is smaller than the {rf}x{rf} receptive field")]
    FrameTooSmall { h: usize, w: usize, rf: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid image file {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error("invalid checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("no valid shots produced: {0}")]
    NoShots(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DclError>;
