//! Posterior-predictive survival curves and their evaluation.

mod evaluation;
mod kaplan_meier;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use evaluation::{
    band_of, classify_at_horizon, classify_scores, evaluation_report, horizon_label, roc_and_threshold, BandCount,
    Classification, Confusion, EvalReport, Histogram, HistogramBin, Label, RocPoint, RocResult, ThresholdRule,
    HISTOGRAM_BIN_WIDTH, SURVIVAL_BANDS,
};
pub use kaplan_meier::{kaplan_meier, KaplanMeier};

use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::network::{NetworkRunState, RiskNetwork};
use crate::stats::RngStream;
use crate::variational::{sample_theta, LatentParams};

pub const DEFAULT_N_MCMC: usize = 200;
pub const DEFAULT_REALISATIONS: usize = 80;
pub const DEFAULT_GRID_DAYS: usize = 365;
pub const DEFAULT_HORIZON_DAYS: f64 = 180.0;

/// Grid 1, 2, …, `days`.
pub fn daily_grid(days: usize) -> Vec<f64> {
    (1..=days).map(|d| d as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub grid: Vec<f64>,
    /// Posterior-predictive draws per realisation.
    pub n_mcmc: usize,
    /// Independent realisations averaged into the point estimate.
    pub realisations: usize,
    pub keep_realisations: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            grid: daily_grid(DEFAULT_GRID_DAYS),
            n_mcmc: DEFAULT_N_MCMC,
            realisations: DEFAULT_REALISATIONS,
            keep_realisations: false,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mcmc == 0 || self.realisations == 0 {
            return Err(Error::Config("n_mcmc and realisations must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("time grid is empty".into()));
        }
        if self.grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("time grid must contain positive finite days".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time grid must be strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// Pointwise 5th percentile across realisations.
    pub lower: Vec<f64>,
    /// Pointwise 95th percentile across realisations.
    pub upper: Vec<f64>,
    pub n_mcmc: usize,
    pub realisations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realisation_curves: Option<Vec<Vec<f64>>>,
}

impl SurvivalCurve {
    /// Ŝ at a grid point; `None` when `t` is not on the grid.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.index_of(t).map(|i| self.s_hat[i])
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&g| (g - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    /// Ŝ ∈ [0, 1], non-increasing, and lower ≤ Ŝ ≤ upper.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.times.len();
        if self.s_hat.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Malformed("curve arrays differ in length".into()));
        }
        for i in 0..n {
            let s = self.s_hat[i];
            if !(0.0..=1.0).contains(&s) || self.lower[i] > s || self.upper[i] < s {
                return Err(Error::Malformed(format!("curve invariant violated at t = {}", self.times[i])));
            }
            if i > 0 && s > self.s_hat[i - 1] {
                return Err(Error::Malformed(format!("curve increases at t = {}", self.times[i])));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "S_hat", "lo", "hi"])?;
        for i in 0..self.times.len() {
            w.write_record(&[
                self.times[i].to_string(),
                self.s_hat[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }
}

/// A fitted model ready for prediction: network, frozen batch-norm
/// statistics and the variational parameters.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub network: &'a RiskNetwork,
    pub state: &'a NetworkRunState,
    pub latent: &'a LatentParams,
    /// Known noise scale used instead of drawing σ from q₀.
    pub fixed_sigma: Option<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(network: &'a RiskNetwork, state: &'a NetworkRunState, latent: &'a LatentParams) -> Self {
        Self {
            network,
            state,
            latent,
            fixed_sigma: None,
        }
    }

    /// Draws `n` posterior-predictive log-times per record with common random
    /// numbers: draw k uses the same θ_k and W_k for every record.
    fn draw_log_times(&self, records: &[&Record], n: usize, rng: &mut RngStream, out: &mut [Vec<f64>]) -> Result<()> {
        let mut state = self.state.clone().inference();
        for buf in out.iter_mut() {
            buf.clear();
        }
        for _ in 0..n {
            let theta = sample_theta(self.latent, rng);
            let sigma = self.fixed_sigma.unwrap_or(theta.sigma);
            let w = rng.standard_normal();
            let h = self.network.forward_batch(&theta.z, records, &mut state, rng)?;
            for (buf, m) in out.iter_mut().zip(h) {
                buf.push(m + sigma * w);
            }
        }
        Ok(())
    }
}

/// Ŝ(t) = #{y_k > ln t} / N for each grid point, from sorted draws.
fn empirical_survival(sorted: &[f64], log_grid: &[f64], out: &mut [f64]) {
    let n = sorted.len() as f64;
    for (o, &lt) in out.iter_mut().zip(log_grid) {
        let above = sorted.len() - sorted.partition_point(|&y| y <= lt);
        *o = above as f64 / n;
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Survival curves for several records from shared posterior draws.
pub fn predict_survival_batch(
    posterior: &Posterior<'_>,
    records: &[&Record],
    config: &PredictConfig,
    rng: &mut RngStream,
) -> Result<Vec<SurvivalCurve>> {
    config.validate()?;
    let g = config.grid.len();
    let log_grid: Vec<f64> = config.grid.iter().map(|t| t.ln()).collect();
    let r_count = config.realisations;
    let mut draws = vec![Vec::with_capacity(config.n_mcmc); records.len()];
    // per record: realisation-major curves
    let mut curves = vec![vec![0.0; r_count * g]; records.len()];
    for r in 0..r_count {
        posterior.draw_log_times(records, config.n_mcmc, rng, &mut draws)?;
        for (d, c) in draws.iter_mut().zip(curves.iter_mut()) {
            d.sort_by(f64::total_cmp);
            empirical_survival(d, &log_grid, &mut c[r * g..(r + 1) * g]);
        }
    }
    let mut out = Vec::with_capacity(records.len());
    let mut column = vec![0.0; r_count];
    for c in curves {
        let mut s_hat = vec![0.0; g];
        let mut lower = vec![0.0; g];
        let mut upper = vec![0.0; g];
        for i in 0..g {
            for r in 0..r_count {
                column[r] = c[r * g + i];
            }
            let mean = column.iter().sum::<f64>() / r_count as f64;
            column.sort_by(f64::total_cmp);
            s_hat[i] = mean;
            lower[i] = percentile(&column, 0.05).min(mean);
            upper[i] = percentile(&column, 0.95).max(mean);
        }
        let realisation_curves = config
            .keep_realisations
            .then(|| c.chunks(g).map(<[f64]>::to_vec).collect());
        let curve = SurvivalCurve {
            times: config.grid.clone(),
            s_hat,
            lower,
            upper,
            n_mcmc: config.n_mcmc,
            realisations: r_count,
            realisation_curves,
        };
        curve.check_invariants()?;
        out.push(curve);
    }
    Ok(out)
}

/// Survival curve for one record.
pub fn predict_survival(
    posterior: &Posterior<'_>,
    record: &Record,
    config: &PredictConfig,
    rng: &mut RngStream,
) -> Result<SurvivalCurve> {
    Ok(predict_survival_batch(posterior, &[record], config, rng)?.remove(0))
}

/// Pointwise mean of Ŝ over a population of records, from shared draws.
pub fn population_survival(
    posterior: &Posterior<'_>,
    records: &[Record],
    grid: &[f64],
    n_mcmc: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::Empty("no records for the population curve".into()));
    }
    let config = PredictConfig {
        grid: grid.to_vec(),
        n_mcmc,
        realisations: 1,
        keep_realisations: false,
    };
    let refs: Vec<&Record> = records.iter().collect();
    let mut acc = vec![0.0; grid.len()];
    for chunk in refs.chunks(512) {
        for c in predict_survival_batch(posterior, chunk, &config, rng)? {
            acc.iter_mut().zip(&c.s_hat).for_each(|(a, s)| *a += s);
        }
    }
    let n = records.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}
