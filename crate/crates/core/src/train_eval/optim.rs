//! Bias-corrected Adam and inverse-frequency class weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamTensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.lr must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "adam {name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First/second moment accumulators mirroring a parameter list, plus the
/// step counter driving bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(tensors: &[(String, ParamTensor)]) -> AdamState {
        let zeros = |t: &ParamTensor| vec![0.0; t.values.len()];
        AdamState {
            m: tensors.iter().map(|(_, t)| zeros(t)).collect(),
            v: tensors.iter().map(|(_, t)| zeros(t)).collect(),
            step: 0,
        }
    }

    /// Completed update steps.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One in-place bias-corrected Adam update.
///
/// Gradients are validated before anything is written, so a rejected step
/// leaves parameters and moments untouched.
pub fn adam_step(
    tensors: &mut [(String, ParamTensor)],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(Error::Shape(format!(
            "adam got {} gradients and {} moment slots for {} tensors",
            grads.len(),
            state.m.len(),
            tensors.len()
        )));
    }
    for ((name, t), g) in tensors.iter().zip(grads) {
        if g.len() != t.values.len() {
            return Err(Error::Shape(format!(
                "gradient for '{name}' has {} components, parameter has {}",
                g.len(),
                t.values.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: name.clone(),
                what: format!("gradient component {i} is {}", g[i]),
            });
        }
    }

    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (ti, (_, tensor)) in tensors.iter_mut().enumerate() {
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for (i, p) in tensor.values.iter_mut().enumerate() {
            let g = grads[ti][i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Inverse-frequency loss weights `w_c = N / (2 N_c)` from training patch
/// counts, ordered `[healthy, tumor]`. Balanced counts give unit weights.
pub fn class_weights(healthy: usize, tumor: usize) -> Result<[f64; 2]> {
    if healthy == 0 || tumor == 0 {
        let missing = if healthy == 0 { "healthy" } else { "tumor" };
        return Err(Error::Config(format!(
            "training patches contain no {missing} samples; the fold cannot be trained"
        )));
    }
    let total = (healthy + tumor) as f64;
    Ok([
        total / (2.0 * healthy as f64),
        total / (2.0 * tumor as f64),
    ])
}
