//! SGD with momentum and Adam. Both operate on flat parameter slices, refuse
//! non-finite gradients without touching the parameters, and do the update
//! arithmetic in f64.

use crate::error::{DclError, Result};
use crate::tensor::Scalar;

/// Hyperparameters for SGD with momentum.
#[derive(Debug, Clone, Copy)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    /// Nesterov variant: step along `g + μ·v` instead of `v`.
    pub nesterov: bool,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self { lr: 0.01, momentum: 0.9, nesterov: false }
    }
}

/// Velocity state for SGD-momentum, congruent with the parameter slice.
#[derive(Debug, Clone)]
pub struct MomentumState {
    velocity: Vec<f64>,
}

impl MomentumState {
    pub fn new(len: usize) -> Self {
        Self { velocity: vec![0.0; len] }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [f64] {
        &mut self.velocity
    }

    /// v ← μ·v + g; θ ← θ − lr·v (classical), or θ ← θ − lr·(g + μ·v)
    /// (Nesterov). Errors on non-finite gradients and leaves both the
    /// parameters and the velocity untouched.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T], hp: &SgdParams) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.velocity.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(DclError::NonFinite("sgd gradient"));
        }
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g.f64();
            *v = hp.momentum * *v + g;
            let update = if hp.nesterov { g + hp.momentum * *v } else { *v };
            *p = T::of(p.f64() - hp.lr * update);
        }
        Ok(())
    }
}

/// Hyperparameters for Adam.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment state for Adam, congruent with the parameter slice.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn moments_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.m, &mut self.v)
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Standard bias-corrected Adam update. Errors on non-finite gradients
    /// and leaves parameters and state untouched.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T], hp: &AdamParams) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(DclError::NonFinite("adam gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        for (((p, &g), m), v) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut())
        {
            let g = g.f64();
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = T::of(p.f64() - hp.lr * m_hat / (v_hat.sqrt() + hp.eps));
        }
        Ok(())
    }
}
