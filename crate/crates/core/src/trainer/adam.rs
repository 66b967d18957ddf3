use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variational::LatentParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config("ADAM betas must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("ADAM epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates for gradient ascent on the flat latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of applied steps.
    pub t: u64,
    /// Steps rejected because the gradient was not finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            skipped: 0,
        }
    }

    /// One ascent step ω ← ω + α m̂ / (√v̂ + ε). A non-finite gradient leaves
    /// both the parameters and the moments unchanged and is counted.
    pub fn step(&mut self, omega: &LatentParams, grad: &[f64], cfg: &AdamConfig) -> Result<LatentParams> {
        let mut flat = omega.to_flat();
        self.step_flat(&mut flat, grad, cfg)?;
        LatentParams::from_flat(omega.noise.family(), &flat)
    }

    /// Same as [`step`](Self::step), on the flat vector in place. Returns
    /// whether the step was applied.
    pub fn step_flat(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) -> Result<bool> {
        if params.len() != grad.len() || grad.len() != self.m.len() {
            return Err(Error::Config(format!(
                "shape mismatch: params {}, grad {}, moments {}",
                params.len(),
                grad.len(),
                self.m.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(true)
    }
}

/// Functional form: returns the updated parameters and moments.
pub fn adam_step(
    omega: &LatentParams,
    grad: &[f64],
    state: &AdamState,
    cfg: &AdamConfig,
) -> Result<(LatentParams, AdamState)> {
    let mut next = state.clone();
    let omega = next.step(omega, grad, cfg)?;
    Ok((omega, next))
}
