use serde::{Deserialize, Serialize};

use super::network::Parameters;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, flat in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_config(len, AdamConfig::default())
    }

    pub fn with_config(len: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            config,
        }
    }
}

/// One bias-corrected Adam update of `theta` at step `t` (1-based).
pub fn adam_step(
    theta: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    t: u64,
    lr: f64,
) -> Result<()> {
    if t == 0 {
        return Err(invalid("Adam step counter starts at 1"));
    }
    if theta.len() != grads.len() || theta.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: theta.len().max(grads.len()),
        });
    }
    update(
        theta,
        grads,
        &mut state.m,
        &mut state.v,
        state.config,
        t,
        lr,
    );
    Ok(())
}

/// Adam over layered parameters, walking layers in flatten order.
pub fn adam_step_params(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut AdamState,
    t: u64,
    lr: f64,
) -> Result<()> {
    if t == 0 {
        return Err(invalid("Adam step counter starts at 1"));
    }
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: params.len(),
        });
    }
    let mut at = 0;
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (theta, grad) in [
            (p.weights.data_mut(), g.weights.data()),
            (p.bias.as_mut_slice(), g.bias.as_slice()),
        ] {
            let n = theta.len();
            let (m, v) = (&mut state.m[at..at + n], &mut state.v[at..at + n]);
            update(theta, grad, m, v, state.config, t, lr);
            at += n;
        }
    }
    Ok(())
}

fn update(
    theta: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: AdamConfig,
    t: u64,
    lr: f64,
) {
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = cfg;
    let bc1 = 1.0 - beta1.powf(t as f64);
    let bc2 = 1.0 - beta2.powf(t as f64);
    for i in 0..theta.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        theta[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + epsilon);
    }
}
