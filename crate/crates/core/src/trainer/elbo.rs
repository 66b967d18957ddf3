//! Monte Carlo ELBO and its score-function gradient
//! ∇_ω L = E_q[∇_ω ln q_ω(θ) (ln p(x, θ) − ln q_ω(θ))].

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::likelihood::Likelihood;
use crate::error::{Error, Result};
use crate::stats::RngStream;
use crate::variational::{
    log_q_network, sample_antithetic, sample_theta, score_grad_into, LatentParams, ModelSample,
};

const MAX_RESAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlVariate {
    None,
    /// Subtract an exponential moving average of past objective values.
    RunningMean,
    /// Subtract the mean objective of the other draws of the same step;
    /// falls back to the running mean with a single draw.
    LeaveOneOut,
}

/// Scalar baseline b subtracted from the score weight. The running value used
/// at an iteration depends only on earlier iterations, so the estimator stays
/// unbiased (E[∇ ln q] = 0); the very first call seeds it from its own draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub kind: ControlVariate,
    pub value: Option<f64>,
    pub decay: f64,
}

impl BaselineState {
    pub fn new(kind: ControlVariate) -> Self {
        Self {
            kind,
            value: None,
            decay: 0.9,
        }
    }

    /// Baseline for each group of draws. Groups are independent of each
    /// other; draws inside a group (an antithetic pair) are not.
    fn for_groups(&mut self, groups: &[Vec<f64>]) -> Vec<f64> {
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let running = *self.value.get_or_insert_with(|| mean(&all));
        match self.kind {
            ControlVariate::None => vec![0.0; groups.len()],
            ControlVariate::LeaveOneOut if groups.len() > 1 => {
                let total: f64 = all.iter().sum();
                groups
                    .iter()
                    .map(|g| (total - g.iter().sum::<f64>()) / (all.len() - g.len()) as f64)
                    .collect()
            }
            _ => vec![running; groups.len()],
        }
    }

    fn update(&mut self, draws: &[f64]) {
        let m = mean(draws);
        self.value = Some(match self.value {
            Some(b) => self.decay * b + (1.0 - self.decay) * m,
            None => m,
        });
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// ln q_ω(θ), omitting q₀ when the model has no learned noise scale.
pub fn model_log_q<M: Likelihood + ?Sized>(model: &M, omega: &LatentParams, theta: &ModelSample) -> Result<f64> {
    let net = log_q_network(omega, &theta.z);
    if model.learns_noise_scale() {
        Ok(omega.noise.log_density(theta.sigma)? + net)
    } else {
        Ok(net)
    }
}

fn evaluate<M: Likelihood + ?Sized>(
    omega: &LatentParams,
    model: &mut M,
    theta: &ModelSample,
    batch: Option<&[usize]>,
    scale: f64,
    prior_sd: Option<f64>,
    rng: &mut RngStream,
) -> Result<(f64, usize)> {
    let ll = model.log_likelihood(theta, batch, rng)?;
    let log_prior = prior_sd.map_or(0.0, |sd| log_prior_network(&theta.z, sd));
    Ok((scale * ll.value + log_prior - model_log_q(model, omega, theta)?, ll.clamped))
}

/// ln p(z) up to a constant for independent N(0, sd²) network parameters.
pub fn log_prior_network(z: &[f64], sd: f64) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() / (sd * sd)
}

/// Draws one group of θ (a single draw or an antithetic pair) and evaluates
/// the scaled objective, resampling when the noise-scale draw is exactly zero.
/// Pair members share the randomness used inside the likelihood (dropout).
fn draw_group<M: Likelihood + ?Sized>(
    omega: &LatentParams,
    model: &mut M,
    batch: Option<&[usize]>,
    scale: f64,
    antithetic: bool,
    prior_sd: Option<f64>,
    rng: &mut RngStream,
) -> Result<Vec<(ModelSample, f64, usize)>> {
    for _ in 0..MAX_RESAMPLES {
        let thetas = if antithetic {
            let (a, b) = sample_antithetic(omega, rng);
            vec![a, b]
        } else {
            vec![sample_theta(omega, rng)]
        };
        let inner_seed = rng.next_u64();
        let mut out = Vec::with_capacity(thetas.len());
        let mut degenerate = false;
        for theta in thetas {
            let mut inner = RngStream::new(inner_seed);
            match evaluate(omega, model, &theta, batch, scale, prior_sd, &mut inner) {
                Ok((v, c)) => out.push((theta, v, c)),
                Err(Error::DegenerateScale) => {
                    degenerate = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !degenerate {
            return Ok(out);
        }
    }
    Err(Error::Numeric("noise scale draw was zero repeatedly".into()))
}

/// ELBO ≈ (1/S) Σ_s [Σ_i l_i(θ_s) − ln q_ω(θ_s)] over the full data.
pub fn elbo_estimate<M: Likelihood + ?Sized>(
    omega: &LatentParams,
    model: &mut M,
    samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("need at least one Monte Carlo sample".into()));
    }
    let mut acc = 0.0;
    for _ in 0..samples {
        acc += draw_group(omega, model, None, 1.0, false, None, rng)?[0].1;
    }
    Ok(acc / samples as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientOptions {
    /// Independent draws, or antithetic pairs when `antithetic` is set.
    pub samples: usize,
    pub antithetic: bool,
    /// Zero the noise-factor components.
    pub freeze_noise_prior: bool,
    /// Independent N(0, sd²) prior on the network parameters; `None` is flat.
    pub prior_sd: Option<f64>,
}

impl GradientOptions {
    pub fn draws(samples: usize) -> Self {
        Self {
            samples,
            antithetic: false,
            freeze_noise_prior: false,
            prior_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Estimate of ∇_ω ELBO in the flat latent layout.
    pub grad: Vec<f64>,
    /// Mean of the per-draw objective (ELBO estimate on the batch, rescaled to N).
    pub objective: f64,
    /// Censored terms clamped at the survival floor.
    pub clamped: usize,
}

/// Score-function gradient (1/S) Σ_s ∇ ln q(θ_s) (L_s − b). When `batch`
/// covers B < N records the likelihood is scaled by N/B.
pub fn elbo_gradient<M: Likelihood + ?Sized>(
    omega: &LatentParams,
    model: &mut M,
    batch: Option<&[usize]>,
    options: GradientOptions,
    rng: &mut RngStream,
    baseline: &mut BaselineState,
) -> Result<GradientEstimate> {
    if options.samples == 0 {
        return Err(Error::Config("need at least one Monte Carlo sample".into()));
    }
    let n = model.num_records();
    let scale = match batch {
        Some(b) if !b.is_empty() => n as f64 / b.len() as f64,
        _ => 1.0,
    };
    let dim = omega.dim();
    let nd = omega.noise_dim();
    let zero_noise = options.freeze_noise_prior || !model.learns_noise_scale();
    let mut scores = Vec::new();
    let mut groups = Vec::with_capacity(options.samples);
    let mut clamped = 0;
    for _ in 0..options.samples {
        let mut values = Vec::with_capacity(2);
        for (theta, value, c) in draw_group(omega, model, batch, scale, options.antithetic, options.prior_sd, rng)? {
            let mut s = vec![0.0; dim];
            score_grad_into(omega, &theta, &mut s);
            if zero_noise {
                s[..nd].fill(0.0);
            }
            scores.push(s);
            values.push(value);
            clamped += c;
        }
        groups.push(values);
    }
    let baselines = baseline.for_groups(&groups);
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let total = all.len() as f64;
    let mut grad = vec![0.0; dim];
    let weights = groups.iter().zip(&baselines).flat_map(|(g, &b)| g.iter().map(move |v| v - b));
    for (s, w) in scores.iter().zip(weights) {
        let w = w / total;
        grad.iter_mut().zip(s).for_each(|(g, si)| *g += si * w);
    }
    baseline.update(&all);
    Ok(GradientEstimate {
        grad,
        objective: mean(&all),
        clamped,
    })
}
