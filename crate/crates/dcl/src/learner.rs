//! The forward model: a single 7×7 convolution over the 8-channel
//! concatenation of the current frame (3 channels) and the one-hot action
//! matrix (5 channels), with a ReLU output. It predicts the next frame and is
//! trained online by SGD with momentum on the mean squared error.
//!
//! The kernel is 7×7×8×3 with no bias, i.e. exactly 1176 trainable
//! parameters.

use crate::action::OneHotAction;
use crate::error::{DclError, Result};
use crate::ops::{conv2d, conv2d_backward, relu, relu_backward};
use crate::optim::{MomentumState, SgdParams};
use crate::rng::{self, Stream};
use crate::tensor::{Kernel4, Scalar, Tensor3};

pub const KERNEL_SIZE: usize = 7;
pub const IMAGE_CHANNELS: usize = 3;
pub const INPUT_CHANNELS: usize = 8;
pub const PARAM_COUNT: usize = KERNEL_SIZE * KERNEL_SIZE * INPUT_CHANNELS * IMAGE_CHANNELS;

/// Initialization settings: a normal distribution truncated at ±2σ.
#[derive(Debug, Clone, Copy)]
pub struct LearnerInit {
    pub mean: f64,
    pub std: f64,
}

impl Default for LearnerInit {
    fn default() -> Self {
        Self { mean: 1e-4, std: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct LearnerNet<T: Scalar> {
    kernel: Kernel4<T>,
    momentum: MomentumState,
    step: u64,
}

pub type LearnerNetF = LearnerNet<f32>;

impl<T: Scalar> LearnerNet<T> {
    /// Fresh net with truncated-normal weights; deterministic per seed.
    pub fn init(seed: u64, init: LearnerInit) -> Result<Self> {
        if !(init.std > 0.0) {
            return Err(DclError::Config(format!("init std must be > 0, got {}", init.std)));
        }
        let mut rng = rng::stream_rng(seed, Stream::LearnerInit);
        let mut raw = vec![0.0f64; PARAM_COUNT];
        rng::fill_truncated_normal(&mut rng, init.mean, init.std, &mut raw);
        let kernel = Kernel4::from_vec(
            KERNEL_SIZE,
            KERNEL_SIZE,
            INPUT_CHANNELS,
            IMAGE_CHANNELS,
            raw.into_iter().map(T::of).collect(),
        )?;
        Ok(Self { kernel, momentum: MomentumState::new(PARAM_COUNT), step: 0 })
    }

    pub fn from_kernel(kernel: Kernel4<T>, step: u64) -> Result<Self> {
        if kernel.kh() != KERNEL_SIZE
            || kernel.kw() != KERNEL_SIZE
            || kernel.cin() != INPUT_CHANNELS
            || kernel.cout() != IMAGE_CHANNELS
        {
            return Err(DclError::ShapeMismatch("forward-model kernel must be 7x7x8x3".into()));
        }
        Ok(Self { kernel, momentum: MomentumState::new(PARAM_COUNT), step })
    }

    pub fn kernel(&self) -> &Kernel4<T> {
        &self.kernel
    }

    pub fn momentum_state(&self) -> &MomentumState {
        &self.momentum
    }

    pub fn momentum_state_mut(&mut self) -> &mut MomentumState {
        &mut self.momentum
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Predict the next frame from the current frame and the one-hot actions.
    pub fn predict(&self, frame: &Tensor3<T>, actions: &OneHotAction<T>) -> Result<Tensor3<T>> {
        let (pre, _) = self.forward(frame, actions)?;
        Ok(relu(&pre))
    }

    /// Forward pass returning the pre-activation and the concatenated input,
    /// which the training step reuses for the backward pass.
    fn forward(
        &self,
        frame: &Tensor3<T>,
        actions: &OneHotAction<T>,
    ) -> Result<(Tensor3<T>, Tensor3<T>)> {
        if frame.spatial_shape() != actions.spatial_shape() {
            return Err(DclError::ShapeMismatch(format!(
                "frame {}x{} vs action matrix {}x{}",
                frame.height(),
                frame.width(),
                actions.tensor().height(),
                actions.tensor().width()
            )));
        }
        if frame.channels() != IMAGE_CHANNELS {
            return Err(DclError::ChannelMismatch {
                input: frame.channels(),
                kernel: IMAGE_CHANNELS,
            });
        }
        let stacked = frame.concat_channels(actions.tensor())?;
        let pre = conv2d(&stacked, &self.kernel)?;
        Ok((pre, stacked))
    }

    /// One forward pass and one SGD-momentum update on the MSE gradient.
    /// Returns the pre-update loss and prediction; on a non-finite loss the
    /// weights are left untouched.
    pub fn train_step(
        &mut self,
        frame: &Tensor3<T>,
        actions: &OneHotAction<T>,
        next: &Tensor3<T>,
        hp: &SgdParams,
    ) -> Result<(f64, Tensor3<T>)> {
        let (pre, stacked) = self.forward(frame, actions)?;
        let pred = relu(&pre);
        let loss = mse(&pred, next)?;
        if !loss.is_finite() {
            return Err(DclError::NonFinite("forward-model loss"));
        }

        // d loss / d pred = 2 (pred - next) / (3 w h)
        let (h, w) = pred.spatial_shape();
        let scale = 2.0 / (IMAGE_CHANNELS * h * w) as f64;
        let mut d_pred = Tensor3::zeros(h, w, IMAGE_CHANNELS);
        for ((d, &p), &n) in d_pred.data_mut().iter_mut().zip(pred.data()).zip(next.data()) {
            *d = T::of(scale * (p.f64() - n.f64()));
        }
        let d_pre = relu_backward(&pre, &d_pred);
        let (_, d_kernel) = conv2d_backward(&stacked, &self.kernel, &d_pre)?;

        self.momentum.step(self.kernel.weights_mut(), d_kernel.weights(), hp)?;
        self.step += 1;
        Ok((loss, pred))
    }
}

/// Mean squared error `(1/(3wh)) Σ (pred − next)²`.
pub fn mse<T: Scalar>(pred: &Tensor3<T>, next: &Tensor3<T>) -> Result<f64> {
    if !pred.same_shape(next) {
        return Err(DclError::ShapeMismatch(format!(
            "prediction {}x{}x{} vs next frame {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.channels(),
            next.height(),
            next.width(),
            next.channels()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(next.data())
        .map(|(&a, &b)| {
            let d = a.f64() - b.f64();
            d * d
        })
        .sum();
    Ok(sum / pred.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{Action, ActionMatrix};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut impl Rng, h: usize, w: usize) -> Tensor3<f64> {
        Tensor3::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..1.0))
    }

    fn random_actions(rng: &mut impl Rng, h: usize, w: usize) -> ActionMatrix {
        ActionMatrix::from_indices(h, w, (0..h * w).map(|_| rng.gen_range(0..5u8)).collect())
            .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_truncated() {
        let a = LearnerNet::<f32>::init(11, LearnerInit::default()).unwrap();
        let b = LearnerNet::<f32>::init(11, LearnerInit::default()).unwrap();
        assert_eq!(a.kernel().weights(), b.kernel().weights());
        assert_eq!(a.param_count(), 1176);
        for &w in a.kernel().weights() {
            assert!(w as f64 >= 1e-4 - 2e-8 && w as f64 <= 1e-4 + 2e-8);
        }
        let c = LearnerNet::<f32>::init(12, LearnerInit::default()).unwrap();
        assert_ne!(a.kernel().weights(), c.kernel().weights());
    }

    #[test]
    fn predict_keeps_frame_shape() {
        let net = LearnerNet::<f32>::init(0, LearnerInit::default()).unwrap();
        let frame = Tensor3::<f32>::zeros(180, 320, 3);
        let actions = ActionMatrix::filled(180, 320, Action::Stay).one_hot();
        let pred = net.predict(&frame, &actions).unwrap();
        assert_eq!(pred.spatial_shape(), (180, 320));
        assert_eq!(pred.channels(), 3);
    }

    #[test]
    fn zero_weights_predict_zero() {
        let kernel = Kernel4::<f64>::zeros(7, 7, 8, 3).unwrap();
        let net = LearnerNet::from_kernel(kernel, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = random_frame(&mut rng, 12, 12);
        let actions = random_actions(&mut rng, 12, 12).one_hot();
        let pred = net.predict(&frame, &actions).unwrap();
        assert!(pred.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn prediction_depends_only_on_7x7_neighborhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = LearnerInit { mean: 0.0, std: 0.05 };
        let net = LearnerNet::<f64>::init(3, init).unwrap();
        let frame = random_frame(&mut rng, 15, 15);
        let actions = random_actions(&mut rng, 15, 15).one_hot();
        let base = net.predict(&frame, &actions).unwrap();

        let (pi, pj) = (7usize, 7usize);
        let mut bumped = frame.clone();
        for c in 0..3 {
            bumped.set(pi, pj, c, bumped.at(pi, pj, c) + 0.5);
        }
        let out = net.predict(&bumped, &actions).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                let moved = (0..3).any(|c| out.at(i, j, c) != base.at(i, j, c));
                let chebyshev =
                    ((i as isize - pi as isize).abs()).max((j as isize - pj as isize).abs());
                if chebyshev > 3 {
                    assert!(!moved, "({i},{j}) outside the 7x7 support changed");
                }
            }
        }
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(&mut rng, 6, 5);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);

        let shifted =
            Tensor3::from_vec(6, 5, 3, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((mse(&shifted, &a).unwrap() - 0.01).abs() < 1e-12);

        // direct-summation oracle
        let b = random_frame(&mut rng, 6, 5);
        let mut want = 0.0;
        for i in 0..6 {
            for j in 0..5 {
                for c in 0..3 {
                    let d = a.at(i, j, c) - b.at(i, j, c);
                    want += d * d;
                }
            }
        }
        want /= (3 * 6 * 5) as f64;
        assert!((mse(&a, &b).unwrap() - want).abs() < 1e-9);

        let small = Tensor3::<f64>::zeros(5, 5, 3);
        assert!(mse(&a, &small).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut net = LearnerNet::<f64>::init(4, LearnerInit { mean: 0.0, std: 0.05 }).unwrap();
        let before = net.kernel().weights().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame = random_frame(&mut rng, 10, 10);
        let next = random_frame(&mut rng, 10, 10);
        let actions = random_actions(&mut rng, 10, 10).one_hot();
        let hp = SgdParams { lr: 0.0, momentum: 0.9, nesterov: false };
        net.train_step(&frame, &actions, &next, &hp).unwrap();
        assert_eq!(net.kernel().weights(), before.as_slice());
    }

    #[test]
    fn train_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frame = random_frame(&mut rng, 12, 12);
        let next = random_frame(&mut rng, 12, 12);
        let actions = random_actions(&mut rng, 12, 12);
        let one_hot = actions.one_hot::<f64>();
        let net = LearnerNet::<f64>::init(7, LearnerInit { mean: 0.01, std: 0.05 }).unwrap();

        // analytic gradient, extracted by running a step with lr = 1, μ = 0
        // so that θ' = θ − g
        let mut probe = net.clone();
        let hp = SgdParams { lr: 1.0, momentum: 0.0, nesterov: false };
        probe.train_step(&frame, &one_hot, &next, &hp).unwrap();
        let grad: Vec<f64> = net
            .kernel()
            .weights()
            .iter()
            .zip(probe.kernel().weights())
            .map(|(&w0, &w1)| w0 - w1)
            .collect();

        let loss_at = |weights: &[f64]| -> f64 {
            let k = Kernel4::from_vec(7, 7, 8, 3, weights.to_vec()).unwrap();
            let n = LearnerNet::from_kernel(k, 0).unwrap();
            let pred = n.predict(&frame, &one_hot).unwrap();
            mse(&pred, &next).unwrap()
        };

        let step = 1e-4;
        let base = net.kernel().weights().to_vec();
        for _ in 0..40 {
            let idx = rng.gen_range(0..base.len());
            let mut wp = base.clone();
            let mut wm = base.clone();
            wp[idx] += step;
            wm[idx] -= step;
            let num = (loss_at(&wp) - loss_at(&wm)) / (2.0 * step);
            let ana = grad[idx];
            let denom = num.abs().max(ana.abs()).max(1e-8);
            assert!((num - ana).abs() / denom < 1e-4, "weight {idx}: {num} vs {ana}");
        }
    }

    #[test]
    fn static_video_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // a fixed textured frame, repeated: the learner must learn identity
        let frame = random_frame(&mut rng, 16, 16);
        let mut net = LearnerNet::<f32>::init(9, LearnerInit::default()).unwrap();
        let hp = SgdParams { lr: 0.05, momentum: 0.9, nesterov: false };
        let frame32 = frame.cast::<f32>();
        let mut last = f64::INFINITY;
        for step in 0..2000 {
            let actions = random_actions(&mut rng, 16, 16).one_hot::<f32>();
            let (loss, _) = net.train_step(&frame32, &actions, &frame32, &hp).unwrap();
            last = loss;
            if step == 0 {
                assert!(loss > 1e-3, "initial loss should be well above the target");
            }
        }
        assert!(last < 1e-4, "per-step loss after 2000 steps: {last}");
        assert_eq!(net.param_count(), 1176);
        assert_eq!(net.step_count(), 2000);
    }

    #[test]
    fn non_finite_loss_refuses_update() {
        let mut net = LearnerNet::<f64>::init(10, LearnerInit { mean: 0.0, std: 0.05 }).unwrap();
        let before = net.kernel().weights().to_vec();
        let mut frame = Tensor3::<f64>::zeros(8, 8, 3);
        frame.set(0, 0, 0, f64::NAN);
        let actions = ActionMatrix::filled(8, 8, Action::Stay).one_hot();
        let next = Tensor3::<f64>::zeros(8, 8, 3);
        let res = net.train_step(&frame, &actions, &next, &SgdParams::default());
        assert!(res.is_err());
        assert_eq!(net.kernel().weights(), before.as_slice());
        assert_eq!(net.step_count(), 0);
    }
}
