//! Request handling for the prediction service, independent of any HTTP
//! framework. [`Service::handle`] maps (method, path, body) to a status code
//! and a JSON body.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{CovariateKind, RawCovariates, RawValue};
use crate::error::{Error, Result};
use crate::network::{NetworkRunState, RiskNetwork};
use crate::predictor::{daily_grid, predict_survival, PredictConfig, Posterior, DEFAULT_GRID_DAYS, DEFAULT_HORIZON_DAYS, DEFAULT_N_MCMC, DEFAULT_REALISATIONS};
use crate::stats::RngStream;
use crate::store::ModelArtifact;

pub const MAX_BATCH: usize = 32;
pub const MAX_CATEGORY_VALUES: usize = 200;
pub const MAX_GRID_DAYS: usize = 3650;
pub const MAX_N_MCMC: usize = 5000;
pub const MAX_REALISATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateInfo {
    pub name: String,
    /// "continuous" or "categorical".
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
    /// Known category values, at most [`MAX_CATEGORY_VALUES`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    /// Training mean, for default form values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaInfo {
    pub covariates: Vec<CovariateInfo>,
    pub horizon_days: f64,
    pub grid_days: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub covariates: BTreeMap<String, Value>,
    /// Daily grid 1..=grid_days; defaults to 365.
    #[serde(default)]
    pub grid_days: Option<usize>,
    #[serde(default)]
    pub n_mcmc: Option<usize>,
    #[serde(default)]
    pub realisations: Option<usize>,
    /// Fixes the Monte Carlo stream; identical requests with the same seed
    /// return identical curves.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResponse {
    pub t: Vec<f64>,
    #[serde(rename = "S_hat")]
    pub s_hat: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub horizon_days: f64,
    /// Ŝ at the horizon, `None` when the grid stops short of it.
    pub s_at_horizon: Option<f64>,
    pub lo_at_horizon: Option<f64>,
    pub hi_at_horizon: Option<f64>,
    pub n_mcmc: usize,
    pub realisations: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: u16, error: impl Into<String>) -> Self {
        Self {
            status,
            error: error.into(),
            fields: Vec::new(),
        }
    }

    fn with_fields(status: u16, error: impl Into<String>, fields: Vec<FieldError>) -> Self {
        Self {
            status,
            error: error.into(),
            fields,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: impl Serialize) -> Self {
        Self {
            status: 200,
            body: serde_json::to_value(body).unwrap_or(Value::Null),
        }
    }

    fn from_error(e: ApiError) -> Self {
        Self {
            status: e.status,
            body: serde_json::to_value(&e).unwrap_or(Value::Null),
        }
    }
}

struct LoadedModel {
    artifact: ModelArtifact,
    network: RiskNetwork,
    state: NetworkRunState,
}

/// Shared, read-only prediction service. Each request draws from its own
/// RNG stream.
pub struct Service {
    model: Option<LoadedModel>,
    fixed_seed: Option<u64>,
    counter: AtomicU64,
}

impl Service {
    /// `fixed_seed` makes every request without its own seed use that seed.
    /// Otherwise such requests get distinct seeds derived from `base_seed`.
    pub fn new(artifact: Option<ModelArtifact>, fixed_seed: Option<u64>, base_seed: u64) -> Result<Self> {
        let model = match artifact {
            Some(artifact) => {
                let (network, state) = artifact.instantiate()?;
                Some(LoadedModel {
                    artifact,
                    network,
                    state,
                })
            }
            None => None,
        };
        Ok(Self {
            model,
            fixed_seed,
            counter: AtomicU64::new(base_seed),
        })
    }

    pub fn num_params(&self) -> Option<usize> {
        self.model.as_ref().map(|m| m.artifact.num_params())
    }

    fn next_seed(&self) -> u64 {
        match self.fixed_seed {
            Some(s) => s,
            None => splitmix64(self.counter.fetch_add(1, Ordering::Relaxed)),
        }
    }

    fn model(&self) -> std::result::Result<&LoadedModel, ApiError> {
        self.model.as_ref().ok_or_else(|| ApiError::new(503, "no model loaded"))
    }

    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> ApiResponse {
        let path = path.split('?').next().unwrap_or("");
        let result = match (method, path) {
            ("GET", "/health") => Ok(self.health()),
            ("GET", "/schema") => self.schema().map(ApiResponse::ok),
            ("POST", "/predict") => parse_body::<PredictRequest>(body)
                .and_then(|req| self.predict(&req, None))
                .map(ApiResponse::ok),
            ("POST", "/predict-batch") => parse_body::<Vec<Value>>(body)
                .and_then(|items| self.predict_batch(&items))
                .map(ApiResponse::ok),
            (_, "/health" | "/schema" | "/predict" | "/predict-batch") => Err(ApiError::new(405, "method not allowed")),
            _ => Err(ApiError::new(404, format!("no route for {path}"))),
        };
        result.unwrap_or_else(ApiResponse::from_error)
    }

    pub fn health(&self) -> ApiResponse {
        ApiResponse::ok(json!({
            "status": if self.model.is_some() { "ok" } else { "no_model" },
            "version": env!("CARGO_PKG_VERSION"),
            "k": self.num_params(),
        }))
    }

    pub fn schema(&self) -> std::result::Result<SchemaInfo, ApiError> {
        let m = &self.model()?.artifact;
        let (mut ci, mut ki) = (0, 0);
        let covariates = m
            .schema
            .covariates
            .iter()
            .map(|cov| match cov.kind {
                CovariateKind::Continuous => {
                    let mean = m.norms.columns[ci].mean;
                    ci += 1;
                    CovariateInfo {
                        name: cov.name.clone(),
                        kind: "continuous".into(),
                        cardinality: None,
                        values: None,
                        truncated: None,
                        mean: Some(mean),
                    }
                }
                CovariateKind::Categorical(d) => {
                    let all = m.vocab.tables[ki].values();
                    ki += 1;
                    let truncated = d > MAX_CATEGORY_VALUES || all.len() > MAX_CATEGORY_VALUES;
                    CovariateInfo {
                        name: cov.name.clone(),
                        kind: "categorical".into(),
                        cardinality: Some(d),
                        values: Some(all.iter().take(MAX_CATEGORY_VALUES).cloned().collect()),
                        truncated: Some(truncated),
                        mean: None,
                    }
                }
            })
            .collect();
        Ok(SchemaInfo {
            covariates,
            horizon_days: DEFAULT_HORIZON_DAYS,
            grid_days: DEFAULT_GRID_DAYS,
        })
    }

    /// Survival curve for one scenario. `shared_seed` is used when the
    /// request carries no seed of its own.
    pub fn predict(&self, req: &PredictRequest, shared_seed: Option<u64>) -> std::result::Result<CurveResponse, ApiError> {
        let m = self.model()?;
        let values = validate_covariates(&m.artifact, &req.covariates)?;
        let config = request_config(req)?;
        let (record, oov) = m.artifact.encode(&values).map_err(|e| match e {
            Error::InvalidValue { field, message } => {
                ApiError::with_fields(400, "invalid covariates", vec![FieldError { field, message }])
            }
            other => ApiError::new(400, other.to_string()),
        })?;
        let seed = req.seed.or(shared_seed).unwrap_or_else(|| self.next_seed());
        let posterior = Posterior::new(&m.network, &m.state, &m.artifact.latent);
        let curve = predict_survival(&posterior, &record, &config, &mut RngStream::new(seed))
            .map_err(|e| ApiError::new(500, e.to_string()))?;
        let h = curve.index_of(DEFAULT_HORIZON_DAYS);
        Ok(CurveResponse {
            s_at_horizon: h.map(|i| curve.s_hat[i]),
            lo_at_horizon: h.map(|i| curve.lower[i]),
            hi_at_horizon: h.map(|i| curve.upper[i]),
            t: curve.times,
            s_hat: curve.s_hat,
            lo: curve.lower,
            hi: curve.upper,
            horizon_days: DEFAULT_HORIZON_DAYS,
            n_mcmc: curve.n_mcmc,
            realisations: curve.realisations,
            seed,
            warnings: oov
                .into_iter()
                .map(|f| format!("{f}: unknown category, using the out-of-vocabulary slot"))
                .collect(),
        })
    }

    /// Order-preserving batch; every item without its own seed shares one
    /// seed so differences between scenarios are not Monte Carlo noise.
    /// Invalid items yield an inline `{"error": ...}` entry.
    pub fn predict_batch(&self, items: &[Value]) -> std::result::Result<Vec<Value>, ApiError> {
        self.model()?;
        if items.len() > MAX_BATCH {
            return Err(ApiError::new(413, format!("at most {MAX_BATCH} scenarios per batch, got {}", items.len())));
        }
        let shared = self.next_seed();
        Ok(items
            .iter()
            .map(|item| {
                let res = serde_json::from_value::<PredictRequest>(item.clone())
                    .map_err(|e| ApiError::new(400, format!("invalid request body: {e}")))
                    .and_then(|req| self.predict(&req, Some(shared)));
                match res {
                    Ok(curve) => serde_json::to_value(curve).unwrap_or(Value::Null),
                    Err(e) => json!({ "status": e.status, "error": e.error, "fields": e.fields }),
                }
            })
            .collect())
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(400, format!("invalid request body: {e}")))
}

fn request_config(req: &PredictRequest) -> std::result::Result<PredictConfig, ApiError> {
    let mut fields = Vec::new();
    let mut check = |name: &str, v: Option<usize>, default: usize, max: usize| match v {
        None => default,
        Some(x) if (1..=max).contains(&x) => x,
        Some(x) => {
            fields.push(FieldError {
                field: name.into(),
                message: format!("must lie in 1..={max}, got {x}"),
            });
            default
        }
    };
    let days = check("grid_days", req.grid_days, DEFAULT_GRID_DAYS, MAX_GRID_DAYS);
    let n_mcmc = check("n_mcmc", req.n_mcmc, DEFAULT_N_MCMC, MAX_N_MCMC);
    let realisations = check("realisations", req.realisations, DEFAULT_REALISATIONS, MAX_REALISATIONS);
    if !fields.is_empty() {
        return Err(ApiError::with_fields(400, "invalid prediction settings", fields));
    }
    Ok(PredictConfig {
        grid: daily_grid(days),
        n_mcmc,
        realisations,
        keep_realisations: false,
    })
}

/// Checks presence and type of every covariate. Missing, unknown or
/// mistyped fields give 400; non-finite numbers give 422.
fn validate_covariates(
    artifact: &ModelArtifact,
    given: &BTreeMap<String, Value>,
) -> std::result::Result<RawCovariates, ApiError> {
    let mut bad = Vec::new();
    let mut non_finite = Vec::new();
    let mut out = RawCovariates::new();
    for cov in &artifact.schema.covariates {
        let Some(v) = given.get(&cov.name) else {
            bad.push(FieldError {
                field: cov.name.clone(),
                message: "missing".into(),
            });
            continue;
        };
        match (cov.kind, v) {
            (CovariateKind::Continuous, Value::Number(n)) => match n.as_f64() {
                Some(x) if x.is_finite() => {
                    out.insert(cov.name.clone(), RawValue::Number(x));
                }
                _ => non_finite.push(cov.name.clone()),
            },
            (CovariateKind::Continuous, Value::String(s)) => match s.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => {
                    out.insert(cov.name.clone(), RawValue::Number(x));
                }
                Ok(_) => non_finite.push(cov.name.clone()),
                Err(_) => bad.push(FieldError {
                    field: cov.name.clone(),
                    message: format!("expected a number, got {s:?}"),
                }),
            },
            (CovariateKind::Categorical(_), Value::String(s)) => {
                out.insert(cov.name.clone(), RawValue::Text(s.clone()));
            }
            (CovariateKind::Categorical(_), Value::Number(n)) => {
                out.insert(cov.name.clone(), RawValue::Text(n.to_string()));
            }
            (kind, other) => bad.push(FieldError {
                field: cov.name.clone(),
                message: format!(
                    "expected a {}, got {other}",
                    if matches!(kind, CovariateKind::Continuous) { "number" } else { "string" }
                ),
            }),
        }
    }
    for name in given.keys() {
        if artifact.schema.get(name).is_none() {
            bad.push(FieldError {
                field: name.clone(),
                message: "not a covariate of this model".into(),
            });
        }
    }
    if !bad.is_empty() {
        return Err(ApiError::with_fields(400, "invalid covariates", bad));
    }
    if !non_finite.is_empty() {
        let fields = non_finite
            .into_iter()
            .map(|field| FieldError {
                field,
                message: "must be finite".into(),
            })
            .collect();
        return Err(ApiError::with_fields(422, "non-finite covariate values", fields));
    }
    Ok(out)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
