use serde::{Deserialize, Serialize};

use crate::{ParameterStore, Result, TensorError};

/// Adam hyperparameters (learning rate is passed per step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay, applied as `θ ← θ − lr·λ·θ` each step.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam(AdamConfig),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

impl Optimizer {
    pub fn step(&self, params: &mut ParameterStore, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, lr),
            Optimizer::Adam(cfg) => adam_step(params, lr, cfg),
        }
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TensorError::Invalid(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

/// `θ ← θ − lr·g`, then gradients are zeroed.
pub fn sgd_step(params: &mut ParameterStore, lr: f64) -> Result<()> {
    check_lr(lr)?;
    for (_, slot) in params.iter_mut() {
        if slot.frozen {
            continue;
        }
        for (v, g) in slot.value.data_mut().iter_mut().zip(slot.grad.data()) {
            *v -= lr * g;
        }
    }
    params.steps += 1;
    params.zero_grads();
    Ok(())
}

/// Adam with bias correction. At step `t` (1-based):
///
/// ```text
/// m ← β1·m + (1−β1)·g         v ← β2·v + (1−β2)·g²
/// m̂ = m / (1−β1^t)            v̂ = v / (1−β2^t)
/// θ ← θ − lr · (m̂ / (√v̂ + ε) + λ·θ)
/// ```
///
/// Moments live in the store; gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParameterStore, lr: f64, cfg: &AdamConfig) -> Result<()> {
    check_lr(lr)?;
    let t = (params.steps + 1) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (_, slot) in params.iter_mut() {
        if slot.frozen {
            continue;
        }
        let grads = slot.grad.data();
        let m = slot.first_moment.data_mut();
        let v = slot.second_moment.data_mut();
        let theta = slot.value.data_mut();
        for i in 0..grads.len() {
            let g = grads[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * theta[i]);
        }
    }
    params.steps += 1;
    params.zero_grads();
    Ok(())
}
