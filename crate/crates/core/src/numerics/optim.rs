//! Adam (optionally with decoupled weight decay) as the single optimizer used
//! by training and attacks, plus plain SGD for protocol-exactness paths.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Per-parameter first/second moment accumulators and the step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl OptState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        OptState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            cfg,
        }
    }
}

/// One Adam update with bias correction; weight decay (when configured) is
/// applied decoupled from the moment estimates.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let c = state.cfg;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let mut update = m_hat / (v_hat.sqrt() + c.epsilon);
        if c.weight_decay != 0.0 {
            update += c.weight_decay * params[i];
        }
        params[i] -= c.learning_rate * update;
    }
    Ok(())
}

/// Plain gradient step `p <- p - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "sgd_step: params {}, grads {}",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}
