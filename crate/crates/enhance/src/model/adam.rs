//! Adam with bias correction on the flat parameter vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One update. `step` is 1-based; returns fresh parameter and state vectors.
pub fn adam_step(
    params: &[f64],
    grads: &[f64],
    state: &AdamState,
    step: usize,
    cfg: &AdamConfig,
) -> Result<(Vec<f64>, AdamState)> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} parameters", params.len()),
            got: format!("{} gradients / {} state", grads.len(), state.m.len()),
        });
    }
    if step == 0 {
        return Err(Error::invalid("Adam step index is 1-based"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut out = Vec::with_capacity(params.len());
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mi = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        let vi = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        out.push(params[i] - cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon));
        m.push(mi);
        v.push(vi);
    }
    Ok((out, AdamState { m, v }))
}
