//! Mean-field variational family q_ω(θ) = q₀(σ) · Π_k N(z_k; μ_k, σ_k²).
//!
//! Two choices of q₀ are supported: a half-normal of scale σ_σ, and a
//! log-normal with ln σ ~ N(m, s²). Scales are stored as logarithms so that
//! unconstrained optimizer steps keep them positive. The flat view of ω used
//! by the optimizer is `[noise params, μ_1..μ_K, ln σ_1..ln σ_K]`, where the
//! noise params are `[ln σ_σ]` or `[m, ln s]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_log_pdf, RngStream};

pub const INIT_SIGMA_SIGMA: f64 = 5.0;
pub const INIT_MU: f64 = 0.0;
pub const INIT_SIGMA: f64 = 1.0;
/// Log-normal noise factor starts with median 5 and unit log-scale spread.
pub const INIT_NOISE_MEDIAN: f64 = 5.0;
pub const INIT_NOISE_LOG_SD: f64 = 0.0;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    HalfNormal,
    #[default]
    LogNormal,
}

impl NoiseFamily {
    pub fn dim(self) -> usize {
        match self {
            NoiseFamily::HalfNormal => 1,
            NoiseFamily::LogNormal => 2,
        }
    }

    pub fn initial(self) -> NoiseFactor {
        match self {
            NoiseFamily::HalfNormal => NoiseFactor::HalfNormal {
                log_scale: INIT_SIGMA_SIGMA.ln(),
            },
            NoiseFamily::LogNormal => NoiseFactor::LogNormal {
                mean_log: INIT_NOISE_MEDIAN.ln(),
                log_sd: INIT_NOISE_LOG_SD,
            },
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-normal" => Ok(NoiseFamily::HalfNormal),
            "log-normal" => Ok(NoiseFamily::LogNormal),
            other => Err(Error::Config(format!("unknown noise family {other:?}"))),
        }
    }
}

/// Variational factor q₀ for the noise scale σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NoiseFactor {
    HalfNormal { log_scale: f64 },
    LogNormal { mean_log: f64, log_sd: f64 },
}

impl NoiseFactor {
    pub fn family(&self) -> NoiseFamily {
        match self {
            NoiseFactor::HalfNormal { .. } => NoiseFamily::HalfNormal,
            NoiseFactor::LogNormal { .. } => NoiseFamily::LogNormal,
        }
    }

    pub fn dim(&self) -> usize {
        self.family().dim()
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            NoiseFactor::HalfNormal { log_scale } => vec![log_scale],
            NoiseFactor::LogNormal { mean_log, log_sd } => vec![mean_log, log_sd],
        }
    }

    pub fn from_params(family: NoiseFamily, p: &[f64]) -> Result<Self> {
        if p.len() != family.dim() {
            return Err(Error::Config(format!("{family:?} noise factor takes {} parameters, got {}", family.dim(), p.len())));
        }
        Ok(match family {
            NoiseFamily::HalfNormal => NoiseFactor::HalfNormal { log_scale: p[0] },
            NoiseFamily::LogNormal => NoiseFactor::LogNormal {
                mean_log: p[0],
                log_sd: p[1],
            },
        })
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            NoiseFactor::HalfNormal { log_scale } => (log_scale.exp() * rng.standard_normal()).abs(),
            NoiseFactor::LogNormal { mean_log, log_sd } => (mean_log + log_sd.exp() * rng.standard_normal()).exp(),
        }
    }

    /// ln q₀(σ).
    pub fn log_density(&self, sigma: f64) -> Result<f64> {
        match *self {
            NoiseFactor::HalfNormal { log_scale } => log_q_noise(log_scale, sigma),
            NoiseFactor::LogNormal { mean_log, log_sd } => {
                if !(sigma > 0.0) {
                    return Err(Error::Domain(format!("log-normal noise draw must be positive, got {sigma}")));
                }
                let ls = sigma.ln();
                Ok(normal_log_pdf((ls - mean_log) / log_sd.exp()) - log_sd - ls)
            }
        }
    }

    /// ∇ ln q₀(σ) with respect to the noise params.
    pub fn score_into(&self, sigma: f64, out: &mut [f64]) {
        match *self {
            NoiseFactor::HalfNormal { log_scale } => {
                out[0] = sigma * sigma * (-2.0 * log_scale).exp() - 1.0;
            }
            NoiseFactor::LogNormal { mean_log, log_sd } => {
                let inv_var = (-2.0 * log_sd).exp();
                let d = sigma.ln() - mean_log;
                out[0] = d * inv_var;
                out[1] = d * d * inv_var - 1.0;
            }
        }
    }

    /// Median of q₀.
    pub fn median(&self) -> f64 {
        match *self {
            NoiseFactor::HalfNormal { log_scale } => log_scale.exp() * 0.674_489_750_196_081_7,
            NoiseFactor::LogNormal { mean_log, .. } => mean_log.exp(),
        }
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub noise: NoiseFactor,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl LatentParams {
    pub fn num_params(&self) -> usize {
        self.mu.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.dim()
    }

    /// Length of the flat latent vector.
    pub fn dim(&self) -> usize {
        2 * self.mu.len() + self.noise_dim()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.log_sigma[k].exp()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.noise.params();
        v.reserve(2 * self.mu.len());
        v.extend_from_slice(&self.mu);
        v.extend_from_slice(&self.log_sigma);
        v
    }

    pub fn from_flat(family: NoiseFamily, flat: &[f64]) -> Result<Self> {
        let nd = family.dim();
        if flat.len() < nd + 2 || (flat.len() - nd) % 2 != 0 {
            return Err(Error::Config(format!("flat latent vector has invalid length {}", flat.len())));
        }
        let k = (flat.len() - nd) / 2;
        Ok(Self {
            noise: NoiseFactor::from_params(family, &flat[..nd])?,
            mu: flat[nd..nd + k].to_vec(),
            log_sigma: flat[nd + k..].to_vec(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.len() != self.log_sigma.len() {
            return Err(Error::Config("latent means and scales must have equal, non-zero length".into()));
        }
        let finite = self.noise.is_finite() && self.mu.iter().chain(&self.log_sigma).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("latent parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

/// One draw θ = [σ, z] from q_ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSample {
    pub sigma: f64,
    pub z: Vec<f64>,
}

/// σ_σ = 5, μ_k = 0, σ_k = 1 with the half-normal noise factor.
pub fn init_latent(k: usize) -> Result<LatentParams> {
    init_latent_with(k, NoiseFamily::HalfNormal)
}

/// μ_k = 0, σ_k = 1 and the family's initial noise factor.
pub fn init_latent_with(k: usize, family: NoiseFamily) -> Result<LatentParams> {
    if k < 1 {
        return Err(Error::Config("need at least one network parameter".into()));
    }
    Ok(LatentParams {
        noise: family.initial(),
        mu: vec![INIT_MU; k],
        log_sigma: vec![INIT_SIGMA.ln(); k],
    })
}

pub fn sample_theta(omega: &LatentParams, rng: &mut RngStream) -> ModelSample {
    let sigma = omega.noise.sample(rng);
    let z = omega
        .mu
        .iter()
        .zip(&omega.log_sigma)
        .map(|(m, ls)| m + ls.exp() * rng.standard_normal())
        .collect();
    ModelSample { sigma, z }
}

/// Two draws sharing σ with mirrored network parameters z = μ ± σ_k ε. Each
/// member is marginally distributed as q_ω.
pub fn sample_antithetic(omega: &LatentParams, rng: &mut RngStream) -> (ModelSample, ModelSample) {
    let sigma = omega.noise.sample(rng);
    let mut plus = Vec::with_capacity(omega.num_params());
    let mut minus = Vec::with_capacity(omega.num_params());
    for (m, ls) in omega.mu.iter().zip(&omega.log_sigma) {
        let d = ls.exp() * rng.standard_normal();
        plus.push(m + d);
        minus.push(m - d);
    }
    (ModelSample { sigma, z: plus }, ModelSample { sigma, z: minus })
}

/// ln q₀(σ) for the half-normal factor.
pub fn log_q_noise(log_sigma_sigma: f64, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("noise scale draw must be non-negative, got {sigma}")));
    }
    let ss = log_sigma_sigma.exp();
    Ok(LN_2 - log_sigma_sigma + normal_log_pdf(sigma / ss))
}

/// Σ_k ln N(z_k; μ_k, σ_k²).
pub fn log_q_network(omega: &LatentParams, z: &[f64]) -> f64 {
    omega
        .mu
        .iter()
        .zip(&omega.log_sigma)
        .zip(z)
        .map(|((m, ls), zk)| normal_log_pdf((zk - m) / ls.exp()) - ls)
        .sum()
}

/// ln q_ω(θ) = ln q₀(σ) + Σ_k ln q_k(z_k).
pub fn log_q(omega: &LatentParams, theta: &ModelSample) -> Result<f64> {
    Ok(omega.noise.log_density(theta.sigma)? + log_q_network(omega, &theta.z))
}

/// ∇_ω ln q_ω(θ) in the flat log-scale parameterization. For the half-normal
/// factor this is `[σ²/σ_σ² − 1, (z−μ)/σ_k², (z−μ)²/σ_k² − 1]`.
pub fn score_grad(omega: &LatentParams, theta: &ModelSample) -> Vec<f64> {
    let mut g = vec![0.0; omega.dim()];
    score_grad_into(omega, theta, &mut g);
    g
}

pub(crate) fn score_grad_into(omega: &LatentParams, theta: &ModelSample, out: &mut [f64]) {
    let k = omega.num_params();
    let nd = omega.noise_dim();
    omega.noise.score_into(theta.sigma, &mut out[..nd]);
    for i in 0..k {
        let inv_var = (-2.0 * omega.log_sigma[i]).exp();
        let d = theta.z[i] - omega.mu[i];
        out[nd + i] = d * inv_var;
        out[nd + k + i] = d * d * inv_var - 1.0;
    }
}
