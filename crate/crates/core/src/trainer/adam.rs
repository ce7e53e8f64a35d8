//! Adam with bias correction folded into the step size, and the epoch schedule.

use super::{Result, TrainError};
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 1e-4;
/// Epochs between tenfold learning-rate decays.
pub const LR_DECAY_EPOCHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, t: 0, m: zeros.clone(), v: zeros }
    }
}

/// Bias-corrected step size at timestep `t` (1-based).
pub fn corrected_lr(base_lr: f64, config: &AdamConfig, t: u64) -> f64 {
    let t = t as i32;
    base_lr * (1.0 - config.beta2.powi(t)).sqrt() / (1.0 - config.beta1.powi(t))
}

/// One update: `t += 1`, then the moments, then
/// `W -= lr_t · m / (√v + ε)`. Returns `lr_t`. Nothing is modified when a
/// gradient is non-finite or a shape is wrong.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, base_lr: f64) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TrainError::Shape(format!("tensor {i}: parameter {:?}, gradient {:?}", p.shape(), g.shape())));
        }
        if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(TrainError::NonFinite(format!(
                "gradient of tensor {i} at element {j} is {} (step {})",
                g.data()[j],
                state.t + 1
            )));
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let lr_t = corrected_lr(base_lr, &state.config, state.t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *w -= lr_t * *m / (v.sqrt() + eps);
        }
    }
    Ok(lr_t)
}

/// `initial · 10^(−⌊epoch / 100⌋)`.
pub fn scheduled_lr(initial: f64, epoch: usize) -> f64 {
    initial / 10f64.powi((epoch / LR_DECAY_EPOCHS) as i32)
}

/// The default schedule, starting at 1e-4.
pub fn lr_schedule(epoch: usize) -> f64 {
    scheduled_lr(DEFAULT_LR, epoch)
}
