//! Action-convolution deep Q-network: a fully convolutional stack that maps
//! an h×w×3 frame to an h×w×5 Q-volume, one Q-value vector per pixel.
//!
//! The full preset is 10 layers: 9×9×3×30, then eight 5×5×30×30, then a
//! linear 5×5×30×5 output — 191,040 weights, no biases, receptive field
//! 45×45. Hidden layers run conv → instance norm → ReLU; the output layer is
//! conv only. A reduced 3-layer preset (depth 8, receptive field 17) exists
//! for gradient checks and fast runs.
//!
//! Receptive-field statements refer to the convolution stack. Instance
//! normalization computes statistics over the whole spatial map, so with
//! normalization enabled every output pixel carries a (small) dependence on
//! every input pixel; locality probes therefore run with normalization
//! disabled.

use rand::Rng;

use crate::action::{Action, ActionMatrix, ACTION_COUNT};
use crate::error::{DclError, Result};
use crate::ops::{conv2d, conv2d_backward, instance_norm, instance_norm_backward, relu, relu_backward};
use crate::optim::{AdamParams, AdamState};
use crate::reward::max_channel;
use crate::rng::{self, Stream};
use crate::tensor::{Kernel4, Map2, Scalar, Tensor3};

pub const IMAGE_CHANNELS: usize = 3;
pub const FULL_PARAM_COUNT: usize = 191_040;

/// Layer stack presets: `(kernel size, cin, cout)` per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetPreset {
    /// 10 layers, depth 30, receptive field 45.
    Full,
    /// 3 layers, depth 8, receptive field 17.
    Reduced,
}

impl NetPreset {
    pub fn layer_shapes(self) -> Vec<(usize, usize, usize)> {
        match self {
            NetPreset::Full => {
                let mut shapes = vec![(9, IMAGE_CHANNELS, 30)];
                shapes.extend(std::iter::repeat((5, 30, 30)).take(8));
                shapes.push((5, 30, ACTION_COUNT));
                shapes
            }
            NetPreset::Reduced => {
                vec![(9, IMAGE_CHANNELS, 8), (5, 8, 8), (5, 8, ACTION_COUNT)]
            }
        }
    }
}

/// Construction settings for [`AcdqnNet`].
#[derive(Debug, Clone)]
pub struct AcdqnConfig {
    pub layers: Vec<(usize, usize, usize)>,
    pub use_norm: bool,
    pub norm_eps: f64,
    pub init_mean: f64,
    pub init_std: f64,
}

impl AcdqnConfig {
    pub fn preset(preset: NetPreset) -> Self {
        Self {
            layers: preset.layer_shapes(),
            use_norm: true,
            norm_eps: 1e-5,
            init_mean: 1e-4,
            init_std: 1e-8,
        }
    }
}

impl Default for AcdqnConfig {
    fn default() -> Self {
        Self::preset(NetPreset::Full)
    }
}

/// How the TD target reads the next-state value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// `T = R + γ·max_a Q_target(I′)`.
    Paper,
    /// `T = R + γ·Q_target(I′)[argmax_a Q_online(I′)]`.
    Ddqn,
}

#[derive(Debug, Clone)]
pub struct AcdqnNet<T: Scalar> {
    layers: Vec<Kernel4<T>>,
    use_norm: bool,
    norm_eps: f64,
    adam: Vec<AdamState>,
    step: u64,
}

pub type AcdqnNetF = AcdqnNet<f32>;

impl<T: Scalar> AcdqnNet<T> {
    /// Fresh net with truncated-normal weights; deterministic per seed.
    pub fn init(seed: u64, cfg: &AcdqnConfig) -> Result<Self> {
        validate_layers(&cfg.layers)?;
        if !(cfg.init_std > 0.0) {
            return Err(DclError::Config(format!("init std must be > 0, got {}", cfg.init_std)));
        }
        let mut rng = rng::stream_rng(seed, Stream::AcdqnInit);
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for &(k, cin, cout) in &cfg.layers {
            let mut raw = vec![0.0f64; k * k * cin * cout];
            rng::fill_truncated_normal(&mut rng, cfg.init_mean, cfg.init_std, &mut raw);
            layers.push(Kernel4::from_vec(k, k, cin, cout, raw.into_iter().map(T::of).collect())?);
        }
        let adam = layers.iter().map(|l| AdamState::new(l.len())).collect();
        Ok(Self { layers, use_norm: cfg.use_norm, norm_eps: cfg.norm_eps, adam, step: 0 })
    }

    pub fn from_layers(layers: Vec<Kernel4<T>>, use_norm: bool, norm_eps: f64) -> Result<Self> {
        let shapes: Vec<(usize, usize, usize)> =
            layers.iter().map(|l| (l.kh(), l.cin(), l.cout())).collect();
        validate_layers(&shapes)?;
        let adam = layers.iter().map(|l| AdamState::new(l.len())).collect();
        Ok(Self { layers, use_norm, norm_eps, adam, step: 0 })
    }

    pub fn layers(&self) -> &[Kernel4<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Kernel4<T>] {
        &mut self.layers
    }

    pub fn adam_states(&self) -> &[AdamState] {
        &self.adam
    }

    pub fn adam_states_mut(&mut self) -> &mut [AdamState] {
        &mut self.adam
    }

    pub fn use_norm(&self) -> bool {
        self.use_norm
    }

    pub fn norm_eps(&self) -> f64 {
        self.norm_eps
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Side length of the square input region influencing one output pixel
    /// through the convolution stack: `1 + Σ (k_i − 1)`.
    pub fn receptive_field(&self) -> usize {
        1 + self.layers.iter().map(|l| l.kh() - 1).sum::<usize>()
    }

    /// Q-volume for a frame. Errors if the frame is smaller than the
    /// receptive field.
    pub fn forward(&self, frame: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_frame(frame)?;
        forward_layers(&self.layers, self.use_norm, self.norm_eps, frame)
    }

    fn check_frame(&self, frame: &Tensor3<T>) -> Result<()> {
        let rf = self.receptive_field();
        let (h, w) = frame.spatial_shape();
        if h < rf || w < rf {
            return Err(DclError::FrameTooSmall { h, w, rf });
        }
        if frame.channels() != self.layers[0].cin() {
            return Err(DclError::ChannelMismatch {
                input: frame.channels(),
                kernel: self.layers[0].cin(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping per-layer intermediates for the backward pass.
    fn forward_trace(&self, frame: &Tensor3<T>) -> Result<ForwardTrace<T>> {
        self.check_frame(frame)?;
        let last = self.layers.len() - 1;
        let mut conv_outs = Vec::with_capacity(self.layers.len());
        let mut norm_outs: Vec<Option<Tensor3<T>>> = Vec::with_capacity(self.layers.len());
        let mut x = frame.clone();
        for (l, kernel) in self.layers.iter().enumerate() {
            let z = conv2d(&x, kernel)?;
            if l == last {
                conv_outs.push(z);
                norm_outs.push(None);
                break;
            }
            let n = if self.use_norm { instance_norm(&z, self.norm_eps)? } else { z.clone() };
            x = relu(&n);
            conv_outs.push(z);
            norm_outs.push(Some(n));
        }
        Ok(ForwardTrace { conv_outs, norm_outs })
    }

    /// Loss, per-item mean |δ| and exact per-layer weight gradients for a
    /// batch, without touching the optimizer.
    ///
    /// The loss is the importance-weighted mean over items of the per-pixel
    /// mean squared TD error on the gathered action; gradient flows only
    /// through `Q[i,j,A[i,j]]`, never through the target.
    pub fn grad_batch(
        &self,
        target: &TargetNet<T>,
        items: &[TrainItem<'_, T>],
        is_weights: Option<&[f64]>,
        gamma: f64,
        mode: TargetMode,
        shifted_step: Option<isize>,
    ) -> Result<BatchGrads> {
        if items.is_empty() {
            return Err(DclError::Config("training batch is empty".into()));
        }
        if let Some(w) = is_weights {
            if w.len() != items.len() {
                return Err(DclError::ShapeMismatch("importance weights vs batch size".into()));
            }
        }
        let batch = items.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.len()]).collect();
        let mut loss = 0.0f64;
        let mut deltas = Vec::with_capacity(items.len());

        for (b, item) in items.iter().enumerate() {
            let weight = is_weights.map_or(1.0, |w| w[b]);
            let trace = self.forward_trace(item.frame)?;
            let q = trace.output();
            let (h, w) = q.spatial_shape();
            if (item.actions.height(), item.actions.width()) != (h, w)
                || (item.reward.height(), item.reward.width()) != (h, w)
            {
                return Err(DclError::ShapeMismatch("transition fields vs Q volume".into()));
            }

            let target_map = match shifted_step {
                None => td_target(item.reward, item.next_frame, self, target, gamma, mode)?,
                Some(k) => {
                    td_target_shifted(item.reward, item.next_frame, target, item.actions, gamma, k)?
                }
            };

            // d loss / d Q[i,j,a] = weight · 2e/(B·h·w) at a = A[i,j]
            let scale = 2.0 * weight / (batch * (h * w) as f64);
            let mut d_q = Tensor3::zeros(h, w, ACTION_COUNT);
            let mut err_sq = 0.0f64;
            let mut err_abs = 0.0f64;
            for i in 0..h {
                for j in 0..w {
                    let a = item.actions.at(i, j).index();
                    let e = q.at(i, j, a).f64() - target_map.at(i, j).f64();
                    err_sq += e * e;
                    err_abs += e.abs();
                    d_q.set(i, j, a, T::of(scale * e));
                }
            }
            let n_px = (h * w) as f64;
            loss += weight * err_sq / n_px / batch;
            deltas.push(err_abs / n_px);

            self.backward_into(item.frame, &trace, &d_q, &mut grads)?;
        }

        if !loss.is_finite() {
            return Err(DclError::NonFinite("td loss"));
        }
        Ok(BatchGrads { loss, deltas, grads })
    }

    /// One Adam step on a batch. Returns the loss and per-item mean |δ| for
    /// priority updates; on any non-finite loss or gradient nothing changes.
    pub fn train_batch(
        &mut self,
        target: &TargetNet<T>,
        items: &[TrainItem<'_, T>],
        is_weights: Option<&[f64]>,
        gamma: f64,
        mode: TargetMode,
        shifted_step: Option<isize>,
        hp: &AdamParams,
    ) -> Result<(f64, Vec<f64>)> {
        let out = self.grad_batch(target, items, is_weights, gamma, mode, shifted_step)?;
        if out.grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(DclError::NonFinite("td gradient"));
        }
        for ((layer, state), grad) in
            self.layers.iter_mut().zip(self.adam.iter_mut()).zip(&out.grads)
        {
            let grad_t: Vec<T> = grad.iter().map(|&g| T::of(g)).collect();
            state.step(layer.weights_mut(), &grad_t, hp)?;
        }
        self.step += 1;
        Ok((out.loss, out.deltas))
    }

    /// Backpropagate `d_out` through the stack, adding weight gradients into
    /// `grads`. Layer inputs are recomputed from the stored traces.
    fn backward_into(
        &self,
        frame: &Tensor3<T>,
        trace: &ForwardTrace<T>,
        d_out: &Tensor3<T>,
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        let last = self.layers.len() - 1;
        let mut g = d_out.clone();
        for l in (0..=last).rev() {
            let d_conv = if l == last {
                g
            } else {
                let n = trace.norm_outs[l].as_ref().expect("hidden layers store norm output");
                let d_n = relu_backward(n, &g);
                if self.use_norm {
                    instance_norm_backward(&trace.conv_outs[l], self.norm_eps, &d_n)?
                } else {
                    d_n
                }
            };
            let input_storage;
            let input = if l == 0 {
                frame
            } else {
                let prev = trace.norm_outs[l - 1].as_ref().expect("hidden layer");
                input_storage = relu(prev);
                &input_storage
            };
            let (d_input, d_kernel) = conv2d_backward(input, &self.layers[l], &d_conv)?;
            for (acc, &dw) in grads[l].iter_mut().zip(d_kernel.weights()) {
                *acc += dw.f64();
            }
            g = d_input;
        }
        Ok(())
    }
}

fn validate_layers(shapes: &[(usize, usize, usize)]) -> Result<()> {
    if shapes.is_empty() {
        return Err(DclError::Config("network needs at least one layer".into()));
    }
    if shapes[0].1 != IMAGE_CHANNELS {
        return Err(DclError::Config(format!(
            "first layer must take {IMAGE_CHANNELS} channels, got {}",
            shapes[0].1
        )));
    }
    if shapes[shapes.len() - 1].2 != ACTION_COUNT {
        return Err(DclError::Config(format!(
            "last layer must emit {ACTION_COUNT} channels, got {}",
            shapes[shapes.len() - 1].2
        )));
    }
    for pair in shapes.windows(2) {
        if pair[0].2 != pair[1].1 {
            return Err(DclError::Config("layer channel chain mismatch".into()));
        }
    }
    Ok(())
}

fn forward_layers<T: Scalar>(
    layers: &[Kernel4<T>],
    use_norm: bool,
    norm_eps: f64,
    frame: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    let last = layers.len() - 1;
    let mut x = frame.clone();
    for (l, kernel) in layers.iter().enumerate() {
        let z = conv2d(&x, kernel)?;
        if l == last {
            return Ok(z);
        }
        let n = if use_norm { instance_norm(&z, norm_eps)? } else { z };
        x = relu(&n);
    }
    unreachable!("loop returns on the last layer")
}

struct ForwardTrace<T: Scalar> {
    conv_outs: Vec<Tensor3<T>>,
    norm_outs: Vec<Option<Tensor3<T>>>,
}

impl<T: Scalar> ForwardTrace<T> {
    fn output(&self) -> &Tensor3<T> {
        self.conv_outs.last().expect("at least one layer")
    }
}

/// One training example viewed by the Q-network.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a, T: Scalar> {
    pub frame: &'a Tensor3<T>,
    pub actions: &'a ActionMatrix,
    pub reward: &'a Map2<T>,
    pub next_frame: &'a Tensor3<T>,
}

/// Output of [`AcdqnNet::grad_batch`].
pub struct BatchGrads {
    pub loss: f64,
    pub deltas: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

/// Frozen copy of the online network used for TD targets.
#[derive(Debug, Clone)]
pub struct TargetNet<T: Scalar> {
    layers: Vec<Kernel4<T>>,
    use_norm: bool,
    norm_eps: f64,
    sync_count: u64,
}

impl<T: Scalar> TargetNet<T> {
    /// Initial snapshot of the online weights.
    pub fn snapshot(net: &AcdqnNet<T>) -> Self {
        Self {
            layers: net.layers.clone(),
            use_norm: net.use_norm,
            norm_eps: net.norm_eps,
            sync_count: 0,
        }
    }

    /// Bit-copy the online weights into the target.
    pub fn sync(&mut self, net: &AcdqnNet<T>) {
        self.layers = net.layers.clone();
        self.sync_count += 1;
    }

    pub fn sync_count(&self) -> u64 {
        self.sync_count
    }

    pub fn set_sync_count(&mut self, count: u64) {
        self.sync_count = count;
    }

    pub fn layers(&self) -> &[Kernel4<T>] {
        &self.layers
    }

    pub fn forward(&self, frame: &Tensor3<T>) -> Result<Tensor3<T>> {
        forward_layers(&self.layers, self.use_norm, self.norm_eps, frame)
    }
}

/// Per-pixel maximum of the Q-volume over the action axis.
pub fn value_image<T: Scalar>(q: &Tensor3<T>) -> Map2<T> {
    max_channel(q)
}

/// Per-pixel argmax over the action axis; ties go to the lowest action index
/// (stay first).
pub fn greedy_actions<T: Scalar>(q: &Tensor3<T>) -> ActionMatrix {
    assert_eq!(q.channels(), ACTION_COUNT, "Q volume must have one channel per action");
    let (h, w) = q.spatial_shape();
    let mut m = ActionMatrix::filled(h, w, Action::Stay);
    for i in 0..h {
        for j in 0..w {
            let mut best = 0usize;
            let mut best_v = q.at(i, j, 0);
            for a in 1..ACTION_COUNT {
                let v = q.at(i, j, a);
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            m.set(i, j, Action::from_index(best as u8).unwrap());
        }
    }
    m
}

/// ε-greedy behavior: per pixel, with probability ε a uniform action,
/// otherwise the greedy one.
pub fn epsilon_greedy<T: Scalar, R: Rng>(q: &Tensor3<T>, epsilon: f64, rng: &mut R) -> ActionMatrix {
    assert!((0.0..=1.0).contains(&epsilon), "epsilon must lie in [0,1]");
    let mut m = greedy_actions(q);
    let (h, w) = q.spatial_shape();
    for i in 0..h {
        for j in 0..w {
            if rng.gen::<f64>() < epsilon {
                let a = rng.gen_range(0..ACTION_COUNT as u8);
                m.set(i, j, Action::from_index(a).unwrap());
            }
        }
    }
    m
}

/// TD target map. No gradient flows through the result.
pub fn td_target<T: Scalar>(
    reward: &Map2<T>,
    next_frame: &Tensor3<T>,
    online: &AcdqnNet<T>,
    target: &TargetNet<T>,
    gamma: f64,
    mode: TargetMode,
) -> Result<Map2<T>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(DclError::Config(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let q_target = target.forward(next_frame)?;
    let (h, w) = q_target.spatial_shape();
    if (reward.height(), reward.width()) != (h, w) {
        return Err(DclError::ShapeMismatch("reward vs next-frame Q volume".into()));
    }
    let bootstrap: Map2<T> = match mode {
        TargetMode::Paper => value_image(&q_target),
        TargetMode::Ddqn => {
            let q_online = online.forward(next_frame)?;
            let picks = greedy_actions(&q_online);
            Map2::from_fn(h, w, |i, j| q_target.at(i, j, picks.at(i, j).index()))
        }
    };
    Ok(Map2::from_fn(h, w, |i, j| {
        T::of(reward.at(i, j).f64() + gamma * bootstrap.at(i, j).f64())
    }))
}

/// Experimental shifted target: the bootstrap value is read at the pixel the
/// taken action moves to, clamped at the frame borders:
/// `T[i,j] = R[i,j] + γ·V_target(I′)[(i,j) + disp(A[i,j])]`.
pub fn td_target_shifted<T: Scalar>(
    reward: &Map2<T>,
    next_frame: &Tensor3<T>,
    target: &TargetNet<T>,
    actions: &ActionMatrix,
    gamma: f64,
    step: isize,
) -> Result<Map2<T>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(DclError::Config(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let values = value_image(&target.forward(next_frame)?);
    let (h, w) = (values.height(), values.width());
    if (reward.height(), reward.width()) != (h, w)
        || (actions.height(), actions.width()) != (h, w)
    {
        return Err(DclError::ShapeMismatch("reward/actions vs next-frame values".into()));
    }
    Ok(Map2::from_fn(h, w, |i, j| {
        let (di, dj) = actions.at(i, j).displacement(step);
        let ii = (i as isize + di).clamp(0, h as isize - 1) as usize;
        let jj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
        T::of(reward.at(i, j).f64() + gamma * values.at(ii, jj).f64())
    }))
}

/// Per-pixel absolute TD error `|Q[i,j,A[i,j]] − T[i,j]|`.
pub fn td_error<T: Scalar>(q: &Tensor3<T>, actions: &ActionMatrix, target: &Map2<T>) -> Map2<T> {
    let (h, w) = q.spatial_shape();
    debug_assert_eq!((actions.height(), actions.width()), (h, w));
    debug_assert_eq!((target.height(), target.width()), (h, w));
    Map2::from_fn(h, w, |i, j| {
        (q.at(i, j, actions.at(i, j).index()) - target.at(i, j)).abs()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reduced_cfg(std: f64) -> AcdqnConfig {
        AcdqnConfig {
            init_std: std,
            init_mean: 0.0,
            ..AcdqnConfig::preset(NetPreset::Reduced)
        }
    }

    fn random_frame<T: Scalar>(rng: &mut impl Rng, h: usize, w: usize) -> Tensor3<T> {
        Tensor3::from_fn(h, w, 3, |_, _, _| T::of(rng.gen_range(0.0..1.0)))
    }

    fn random_q(rng: &mut impl Rng, h: usize, w: usize) -> Tensor3<f64> {
        Tensor3::from_fn(h, w, ACTION_COUNT, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn full_preset_has_expected_counts() {
        let net = AcdqnNet::<f32>::init(0, &AcdqnConfig::default()).unwrap();
        assert_eq!(net.param_count(), FULL_PARAM_COUNT);
        assert_eq!(net.layers().len(), 10);
        assert_eq!(net.receptive_field(), 45);
        let shapes: Vec<_> =
            net.layers().iter().map(|l| (l.kh(), l.kw(), l.cin(), l.cout())).collect();
        assert_eq!(shapes[0], (9, 9, 3, 30));
        for s in &shapes[1..9] {
            assert_eq!(*s, (5, 5, 30, 30));
        }
        assert_eq!(shapes[9], (5, 5, 30, 5));
    }

    #[test]
    fn reduced_preset_counts() {
        let net = AcdqnNet::<f32>::init(0, &AcdqnConfig::preset(NetPreset::Reduced)).unwrap();
        assert_eq!(net.param_count(), 9 * 9 * 3 * 8 + 5 * 5 * 8 * 8 + 5 * 5 * 8 * 5);
        assert_eq!(net.receptive_field(), 17);
    }

    #[test]
    fn init_is_reproducible() {
        let a = AcdqnNet::<f32>::init(5, &AcdqnConfig::default()).unwrap();
        let b = AcdqnNet::<f32>::init(5, &AcdqnConfig::default()).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
        let c = AcdqnNet::<f32>::init(6, &AcdqnConfig::default()).unwrap();
        assert_ne!(a.layers()[0].weights(), c.layers()[0].weights());
    }

    #[test]
    fn forward_shape_and_minimum_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = AcdqnNet::<f32>::init(2, &reduced_cfg(0.05)).unwrap();
        let frame = random_frame::<f32>(&mut rng, 20, 24);
        let q = net.forward(&frame).unwrap();
        assert_eq!(q.spatial_shape(), (20, 24));
        assert_eq!(q.channels(), 5);

        let small = random_frame::<f32>(&mut rng, 16, 24);
        assert!(matches!(net.forward(&small), Err(DclError::FrameTooSmall { .. })));
    }

    #[test]
    fn zero_weights_give_zero_q() {
        let shapes = NetPreset::Reduced.layer_shapes();
        let layers: Vec<Kernel4<f32>> = shapes
            .iter()
            .map(|&(k, cin, cout)| Kernel4::zeros(k, k, cin, cout).unwrap())
            .collect();
        let net = AcdqnNet::from_layers(layers, true, 1e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = random_frame::<f32>(&mut rng, 20, 20);
        let q = net.forward(&frame).unwrap();
        assert!(q.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn perturbation_stays_within_receptive_field_without_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AcdqnConfig { use_norm: false, ..reduced_cfg(0.05) };
        let net = AcdqnNet::<f64>::init(4, &cfg).unwrap();
        let rf = net.receptive_field();
        assert_eq!(rf, 17);
        let frame = random_frame::<f64>(&mut rng, 28, 28);
        let base = net.forward(&frame).unwrap();

        for _ in 0..5 {
            let pi = rng.gen_range(0..28);
            let pj = rng.gen_range(0..28);
            let mut bumped = frame.clone();
            for c in 0..3 {
                bumped.set(pi, pj, c, bumped.at(pi, pj, c) + 0.5);
            }
            let out = net.forward(&bumped).unwrap();
            let radius = (rf / 2) as isize;
            let mut changed_inside = false;
            for i in 0..28 {
                for j in 0..28 {
                    let cheb = ((i as isize - pi as isize).abs())
                        .max((j as isize - pj as isize).abs());
                    let moved = (0..5).any(|a| out.at(i, j, a) != base.at(i, j, a));
                    if cheb > radius {
                        assert!(!moved, "probe ({pi},{pj}) leaked to ({i},{j})");
                    } else if moved {
                        changed_inside = true;
                    }
                }
            }
            assert!(changed_inside, "probe must move something inside the field");
        }
    }

    #[test]
    fn value_image_examples() {
        let q = Tensor3::from_fn(3, 3, 5, |_, _, _| 0.4f64);
        let v = value_image(&q);
        assert!(v.data().iter().all(|x| (*x - 0.4).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_q(&mut rng, 6, 4);
        let v = value_image(&q);
        for i in 0..6 {
            for j in 0..4 {
                let want = (0..5).map(|a| q.at(i, j, a)).fold(f64::MIN, f64::max);
                assert_eq!(v.at(i, j), want);
            }
        }
    }

    #[test]
    fn greedy_ties_break_to_stay() {
        let q = Tensor3::from_fn(4, 4, 5, |_, _, _| 1.0f64);
        let m = greedy_actions(&q);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.at(i, j), Action::Stay);
            }
        }

        let mut q2 = q.clone();
        q2.set(2, 3, Action::Up.index(), 2.0);
        let m2 = greedy_actions(&q2);
        assert_eq!(m2.at(2, 3), Action::Up);
        assert_eq!(m2.at(0, 0), Action::Stay);
    }

    #[test]
    fn greedy_matches_loop_oracle_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_q(&mut rng, 9, 7);
        let m = greedy_actions(&q);
        for i in 0..9 {
            for j in 0..7 {
                let mut best = 0;
                for a in 1..5 {
                    if q.at(i, j, a) > q.at(i, j, best) {
                        best = a;
                    }
                }
                assert_eq!(m.at(i, j).index(), best);
            }
        }
        let scaled = Tensor3::from_fn(9, 7, 5, |i, j, a| 3.5 * q.at(i, j, a));
        assert_eq!(greedy_actions(&scaled), m);
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_q(&mut rng, 8, 8);
        let m = epsilon_greedy(&q, 0.0, &mut rng);
        assert_eq!(m, greedy_actions(&q));
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = Tensor3::from_fn(200, 500, 5, |_, _, a| -(a as f64));
        let m = epsilon_greedy(&q, 1.0, &mut rng);
        let mut counts = [0usize; 5];
        for &idx in m.indices() {
            counts[idx as usize] += 1;
        }
        let n = (200 * 500) as f64;
        let sigma = (n * 0.2 * 0.8).sqrt();
        for (a, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - n * 0.2).abs() < 3.0 * sigma,
                "action {a}: {c} vs {}",
                n * 0.2
            );
        }
    }

    #[test]
    fn epsilon_half_greedy_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // unique maximum everywhere: greedy = Right
        let q = Tensor3::from_fn(200, 500, 5, |_, _, a| a as f64);
        let m = epsilon_greedy(&q, 0.5, &mut rng);
        let greedy = m.indices().iter().filter(|&&a| a == 4).count();
        let n = (200 * 500) as f64;
        let p = 0.5 + 0.5 / 5.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((greedy as f64 - n * p).abs() < 3.0 * sigma);
    }

    fn zero_nets(h: usize, w: usize) -> (AcdqnNet<f64>, TargetNet<f64>, Tensor3<f64>) {
        let shapes = NetPreset::Reduced.layer_shapes();
        let layers: Vec<Kernel4<f64>> = shapes
            .iter()
            .map(|&(k, cin, cout)| Kernel4::zeros(k, k, cin, cout).unwrap())
            .collect();
        let net = AcdqnNet::from_layers(layers, true, 1e-5).unwrap();
        let target = TargetNet::snapshot(&net);
        (net, target, Tensor3::zeros(h, w, 3))
    }

    #[test]
    fn td_target_trivial_and_arithmetic() {
        let (net, target, frame) = zero_nets(20, 20);
        let reward = Map2::<f64>::zeros(20, 20);
        let t = td_target(&reward, &frame, &net, &target, 0.9, TargetMode::Paper).unwrap();
        assert!(t.data().iter().all(|v| *v == 0.0));

        // R = 1 and max_a Q_target = 2 → T = 1 + 0.9·2 = 2.8, checked through
        // a hand-built target map
        let mut r2 = Map2::<f64>::zeros(20, 20);
        r2.set(3, 4, 1.0);
        let q_val = 2.0;
        let t_manual = r2.at(3, 4) + 0.9 * q_val;
        assert!((t_manual - 2.8f64).abs() < 1e-15);
    }

    #[test]
    fn td_target_modes_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let online = AcdqnNet::<f64>::init(11, &reduced_cfg(0.05)).unwrap();
        let mut target = TargetNet::snapshot(&online);
        // desynchronize: target snapshot of a different net
        let other = AcdqnNet::<f64>::init(12, &reduced_cfg(0.05)).unwrap();
        target.sync(&other);

        let frame = random_frame::<f64>(&mut rng, 20, 20);
        let reward = Map2::from_fn(20, 20, |_, _| rng.gen_range(0.0..0.5));
        let gamma = 0.9;

        let qt = target.forward(&frame).unwrap();
        let qo = online.forward(&frame).unwrap();

        let t_paper =
            td_target(&reward, &frame, &online, &target, gamma, TargetMode::Paper).unwrap();
        let t_ddqn =
            td_target(&reward, &frame, &online, &target, gamma, TargetMode::Ddqn).unwrap();

        for i in 0..20 {
            for j in 0..20 {
                let max_t = (0..5).map(|a| qt.at(i, j, a)).fold(f64::MIN, f64::max);
                let want_paper = reward.at(i, j) + gamma * max_t;
                assert!((t_paper.at(i, j) - want_paper).abs() < 1e-12);

                let mut best = 0;
                for a in 1..5 {
                    if qo.at(i, j, a) > qo.at(i, j, best) {
                        best = a;
                    }
                }
                let want_ddqn = reward.at(i, j) + gamma * qt.at(i, j, best);
                assert!((t_ddqn.at(i, j) - want_ddqn).abs() < 1e-12);

                // max dominates any gathered value
                assert!(t_ddqn.at(i, j) <= t_paper.at(i, j) + 1e-12);
            }
        }
    }

    #[test]
    fn gamma_zero_target_equals_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let online = AcdqnNet::<f64>::init(14, &reduced_cfg(0.05)).unwrap();
        let target = TargetNet::snapshot(&online);
        let frame = random_frame::<f64>(&mut rng, 20, 20);
        let reward = Map2::from_fn(20, 20, |_, _| rng.gen_range(0.0..0.5));
        let t = td_target(&reward, &frame, &online, &target, 0.0, TargetMode::Paper).unwrap();
        for (a, b) in t.data().iter().zip(reward.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn td_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = random_q(&mut rng, 6, 6);
        let actions = ActionMatrix::from_indices(
            6,
            6,
            (0..36).map(|_| rng.gen_range(0..5u8)).collect(),
        )
        .unwrap();

        let gathered = Map2::from_fn(6, 6, |i, j| q.at(i, j, actions.at(i, j).index()));
        let zero = td_error(&q, &actions, &gathered);
        assert!(zero.data().iter().all(|v| *v == 0.0));

        let off = Map2::from_fn(6, 6, |i, j| gathered.at(i, j) - 0.7);
        let d = td_error(&q, &actions, &off);
        assert!(d.data().iter().all(|v| (*v - 0.7).abs() < 1e-12));

        let mut rng2 = ChaCha8Rng::seed_from_u64(16);
        let t = Map2::from_fn(6, 6, |_, _| rng2.gen_range(-1.0..1.0));
        let d2 = td_error(&q, &actions, &t);
        for i in 0..6 {
            for j in 0..6 {
                let want = (q.at(i, j, actions.at(i, j).index()) - t.at(i, j)).abs();
                assert_eq!(d2.at(i, j), want);
            }
        }
    }

    #[test]
    fn shifted_target_reads_displaced_value() {
        let online = AcdqnNet::<f64>::init(17, &reduced_cfg(0.05)).unwrap();
        let target = TargetNet::snapshot(&online);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let frame = random_frame::<f64>(&mut rng, 20, 20);
        let reward = Map2::<f64>::zeros(20, 20);
        let values = value_image(&target.forward(&frame).unwrap());

        let actions = ActionMatrix::filled(20, 20, Action::Right);
        let t = td_target_shifted(&reward, &frame, &target, &actions, 0.5, 2).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let jj = (j + 2).min(19);
                assert!((t.at(i, j) - 0.5 * values.at(i, jj)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_everything_train_step_is_noop() {
        let (mut net, target, frame) = zero_nets(20, 20);
        let reward = Map2::<f64>::zeros(20, 20);
        let actions = ActionMatrix::filled(20, 20, Action::Stay);
        let items = [TrainItem {
            frame: &frame,
            actions: &actions,
            reward: &reward,
            next_frame: &frame,
        }];
        let before: Vec<Vec<f64>> =
            net.layers().iter().map(|l| l.weights().to_vec()).collect();
        let (loss, deltas) = net
            .train_batch(
                &target,
                &items,
                None,
                0.7,
                TargetMode::Paper,
                None,
                &AdamParams::default(),
            )
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(deltas.iter().all(|d| *d == 0.0));
        for (layer, want) in net.layers().iter().zip(&before) {
            assert_eq!(layer.weights(), want.as_slice());
        }
    }

    #[test]
    fn grad_batch_matches_finite_differences() {
        // two-layer reduced stack in f64, gradient of the gathered-Q TD loss
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let shapes = vec![(5, 3, 4), (5, 4, 5)];
        let cfg = AcdqnConfig {
            layers: shapes,
            use_norm: true,
            norm_eps: 1e-3,
            init_mean: 0.0,
            init_std: 0.1,
        };
        let net = AcdqnNet::<f64>::init(20, &cfg).unwrap();
        let target_src = AcdqnNet::<f64>::init(21, &cfg).unwrap();
        let target = TargetNet::snapshot(&target_src);

        let frame = random_frame::<f64>(&mut rng, 12, 12);
        let next = random_frame::<f64>(&mut rng, 12, 12);
        let reward = Map2::from_fn(12, 12, |_, _| rng.gen_range(0.0..0.3));
        let actions = ActionMatrix::from_indices(
            12,
            12,
            (0..144).map(|_| rng.gen_range(0..5u8)).collect(),
        )
        .unwrap();
        let items =
            [TrainItem { frame: &frame, actions: &actions, reward: &reward, next_frame: &next }];

        let out = net
            .grad_batch(&target, &items, None, 0.8, TargetMode::Paper, None)
            .unwrap();

        let loss_with = |net: &AcdqnNet<f64>| -> f64 {
            let q = net.forward(&frame).unwrap();
            let t = td_target(&reward, &next, net, &target, 0.8, TargetMode::Paper).unwrap();
            let mut acc = 0.0;
            for i in 0..12 {
                for j in 0..12 {
                    let e = q.at(i, j, actions.at(i, j).index()) - t.at(i, j);
                    acc += e * e;
                }
            }
            acc / 144.0
        };

        let step = 1e-4;
        for l in 0..net.layers().len() {
            for _ in 0..20 {
                let idx = rng.gen_range(0..net.layers()[l].len());
                let mut np = net.clone();
                let mut nm = net.clone();
                np.layers_mut()[l].weights_mut()[idx] += step;
                nm.layers_mut()[l].weights_mut()[idx] -= step;
                let num = (loss_with(&np) - loss_with(&nm)) / (2.0 * step);
                let ana = out.grads[l][idx];
                let denom = num.abs().max(ana.abs()).max(1e-8);
                assert!(
                    (num - ana).abs() / denom < 1e-4,
                    "layer {l} weight {idx}: {num} vs {ana}"
                );
            }
        }
    }

    #[test]
    fn sync_copies_weights_exactly() {
        let mut online = AcdqnNet::<f64>::init(22, &reduced_cfg(0.05)).unwrap();
        let mut target = TargetNet::snapshot(&online);
        let initial: Vec<Vec<f64>> =
            online.layers().iter().map(|l| l.weights().to_vec()).collect();

        // train a little so online drifts from the snapshot
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let frame = random_frame::<f64>(&mut rng, 20, 20);
        let next = random_frame::<f64>(&mut rng, 20, 20);
        let reward = Map2::from_fn(20, 20, |_, _| rng.gen_range(0.0..0.3));
        let actions = ActionMatrix::filled(20, 20, Action::Stay);
        let items =
            [TrainItem { frame: &frame, actions: &actions, reward: &reward, next_frame: &next }];
        online
            .train_batch(
                &target,
                &items,
                None,
                0.9,
                TargetMode::Paper,
                None,
                &AdamParams::default(),
            )
            .unwrap();

        // before the first sync the target still equals the initial snapshot
        for (layer, want) in target.layers().iter().zip(&initial) {
            assert_eq!(layer.weights(), want.as_slice());
        }
        assert_eq!(target.sync_count(), 0);

        target.sync(&online);
        assert_eq!(target.sync_count(), 1);
        for (a, b) in target.layers().iter().zip(online.layers()) {
            assert_eq!(a.weights(), b.weights());
        }
        let qa = target.forward(&frame).unwrap();
        let qb = online.forward(&frame).unwrap();
        assert_eq!(qa.data(), qb.data());
    }

    #[test]
    fn sync_every_c_steps_counts_ceil() {
        let online = AcdqnNet::<f64>::init(24, &reduced_cfg(0.05)).unwrap();
        let mut target = TargetNet::snapshot(&online);
        let c = 7u64;
        let n = 23u64;
        for step in 1..=n {
            if step % c == 0 || step == n {
                target.sync(&online);
            }
        }
        // syncs at 7, 14, 21 and the final one at 23 = ceil(23/7) = 4
        assert_eq!(target.sync_count(), (n + c - 1) / c);
    }
}
