use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::network::{Mode, NetworkRunState, RiskNetwork};
use crate::stats::{normal_log_pdf, normal_sf, RngStream, MIN_SURVIVAL};
use crate::variational::ModelSample;

/// Per-record log-likelihood contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordLikelihood {
    pub value: f64,
    /// The survival probability underflowed and was clamped.
    pub clamped: bool,
}

/// Log-likelihood of one record under location `location` = h_z(x) and
/// noise scale `sigma`.
///
/// Uncensored: ln N(y; h, σ²). Censored: ln(1 − Φ((y − h)/σ)), the log
/// probability of surviving past the censoring time. The log-normal Jacobian
/// −y is constant in θ and omitted.
pub fn record_log_likelihood(sigma: f64, location: f64, record: &Record) -> Result<RecordLikelihood> {
    if sigma == 0.0 {
        return Err(Error::DegenerateScale);
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("noise scale must be positive, got {sigma}")));
    }
    let u = (record.y - location) / sigma;
    if !record.censored {
        return Ok(RecordLikelihood {
            value: normal_log_pdf(u) - sigma.ln(),
            clamped: false,
        });
    }
    let s = normal_sf(u);
    if s < MIN_SURVIVAL {
        Ok(RecordLikelihood {
            value: MIN_SURVIVAL.ln(),
            clamped: true,
        })
    } else {
        Ok(RecordLikelihood {
            value: s.ln(),
            clamped: false,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LikelihoodSum {
    pub value: f64,
    pub clamped: usize,
}

/// A data model whose parameters are drawn from the variational family.
pub trait Likelihood {
    /// Number of network-like parameters K (excluding the noise scale).
    fn num_params(&self) -> usize;

    fn num_records(&self) -> usize;

    /// Whether θ carries a learned noise scale σ with half-normal factor q₀.
    fn learns_noise_scale(&self) -> bool {
        true
    }

    /// Σ_i l_i(θ) over `batch` (indices into the records), or all records.
    fn log_likelihood(&mut self, theta: &ModelSample, batch: Option<&[usize]>, rng: &mut RngStream) -> Result<LikelihoodSum>;

    /// Called once after every applied optimizer iteration.
    fn end_iteration(&mut self) {}

    /// Called instead of `end_iteration` when the iteration was rejected.
    fn discard_iteration(&mut self) {}
}

/// The censored log-normal AFT likelihood with risk function h_z.
#[derive(Debug, Clone)]
pub struct AftLikelihood<'a> {
    pub network: &'a RiskNetwork,
    pub records: &'a [Record],
    pub state: NetworkRunState,
}

impl<'a> AftLikelihood<'a> {
    pub fn new(network: &'a RiskNetwork, records: &'a [Record], mode: Mode) -> Self {
        Self {
            network,
            records,
            state: network.run_state(mode),
        }
    }

    pub fn into_state(self) -> NetworkRunState {
        self.state
    }
}

impl Likelihood for AftLikelihood<'_> {
    fn num_params(&self) -> usize {
        self.network.num_params()
    }

    fn num_records(&self) -> usize {
        self.records.len()
    }

    fn log_likelihood(&mut self, theta: &ModelSample, batch: Option<&[usize]>, rng: &mut RngStream) -> Result<LikelihoodSum> {
        let refs: Vec<&Record> = match batch {
            Some(idx) => idx.iter().map(|&i| &self.records[i]).collect(),
            None => self.records.iter().collect(),
        };
        if refs.is_empty() {
            return Ok(LikelihoodSum::default());
        }
        let h = self.network.forward_batch(&theta.z, &refs, &mut self.state, rng)?;
        let mut sum = LikelihoodSum::default();
        for (rec, &m) in refs.iter().zip(&h) {
            let l = record_log_likelihood(theta.sigma, m, rec)?;
            sum.value += l.value;
            sum.clamped += usize::from(l.clamped);
        }
        Ok(sum)
    }

    fn end_iteration(&mut self) {
        if self.state.mode == Mode::Training {
            self.state.commit();
        }
    }

    fn discard_iteration(&mut self) {
        self.state.discard_pending();
    }
}

/// Observations y_i = μ + W with known noise scale; a one-parameter model
/// with a closed-form posterior N(ȳ, σ²/n) under a flat prior.
#[derive(Debug, Clone)]
pub struct NormalMeanLikelihood {
    pub observations: Vec<f64>,
    pub sigma: f64,
}

impl NormalMeanLikelihood {
    pub fn posterior_mean(&self) -> f64 {
        self.observations.iter().sum::<f64>() / self.observations.len() as f64
    }

    pub fn posterior_std(&self) -> f64 {
        self.sigma / (self.observations.len() as f64).sqrt()
    }
}

impl Likelihood for NormalMeanLikelihood {
    fn num_params(&self) -> usize {
        1
    }

    fn num_records(&self) -> usize {
        self.observations.len()
    }

    fn learns_noise_scale(&self) -> bool {
        false
    }

    fn log_likelihood(&mut self, theta: &ModelSample, batch: Option<&[usize]>, _rng: &mut RngStream) -> Result<LikelihoodSum> {
        let mu = theta.z[0];
        let term = |y: f64| normal_log_pdf((y - mu) / self.sigma) - self.sigma.ln();
        let value = match batch {
            Some(idx) => idx.iter().map(|&i| term(self.observations[i])).sum(),
            None => self.observations.iter().map(|&y| term(y)).sum(),
        };
        Ok(LikelihoodSum { value, clamped: 0 })
    }
}
