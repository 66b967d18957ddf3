//! Versioned JSON persistence of trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{encode_covariates, CovariateSchema, Dataset, NormStats, RawCovariates, Record, Vocabulary};
use crate::error::{Error, Result};
use crate::network::{BatchNormStats, Mode, NetworkConfig, NetworkRunState, RiskNetwork};
use crate::trainer::{StopReason, TrainConfig, TrainOutcome};
use crate::variational::LatentParams;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub config: TrainConfig,
    /// Mean loss over the last stopping window; `None` if not trained.
    pub final_loss: Option<f64>,
    pub iterations: usize,
    pub stop: Option<StopReason>,
    pub n_records: usize,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u64,
    pub schema: CovariateSchema,
    pub vocab: Vocabulary,
    pub norms: NormStats,
    pub network: NetworkConfig,
    pub batch_norm: Vec<BatchNormStats>,
    pub latent: LatentParams,
    pub training: TrainingMetadata,
}

impl ModelArtifact {
    /// Bundles a finished training run with the encoders of its dataset.
    pub fn from_training(
        dataset: &Dataset,
        network: NetworkConfig,
        state: &NetworkRunState,
        outcome: &TrainOutcome,
        config: &TrainConfig,
    ) -> Result<Self> {
        let artifact = Self {
            format_version: FORMAT_VERSION,
            schema: dataset.schema.clone(),
            vocab: dataset.vocab.clone(),
            norms: dataset.norms.clone(),
            network,
            batch_norm: state.batch_norm.clone(),
            latent: outcome.latent.clone(),
            training: TrainingMetadata {
                seed: config.seed,
                config: config.clone(),
                final_loss: outcome.trace.final_loss(config.window),
                iterations: outcome.trace.entries.len(),
                stop: Some(outcome.trace.stop),
                n_records: dataset.len(),
                provenance: dataset.provenance.clone(),
            },
        };
        artifact.validate()?;
        Ok(artifact)
    }

    pub fn num_params(&self) -> usize {
        self.latent.num_params()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        self.schema.validate()?;
        self.network.validate()?;
        self.latent.validate()?;
        let net = RiskNetwork::new(self.network.clone())?;
        if net.num_params() != self.latent.num_params() {
            return Err(Error::Malformed(format!(
                "network config implies K = {} but the latent vector has K = {}",
                net.num_params(),
                self.latent.num_params()
            )));
        }
        if self.network.n_continuous != self.schema.n_continuous()
            || self.network.cardinalities.len() != self.schema.n_categorical()
        {
            return Err(Error::Malformed("network inputs do not match the covariate schema".into()));
        }
        if self.norms.columns.len() != self.schema.n_continuous() {
            return Err(Error::Malformed("normalization stats do not match the schema".into()));
        }
        if self.vocab.tables.len() != self.schema.n_categorical() {
            return Err(Error::Malformed("vocabulary does not match the schema".into()));
        }
        let expected = net.run_state(Mode::Inference);
        let shapes_match = expected.batch_norm.len() == self.batch_norm.len()
            && expected
                .batch_norm
                .iter()
                .zip(&self.batch_norm)
                .all(|(a, b)| a.mean.len() == b.mean.len() && a.var.len() == b.var.len());
        if !shapes_match {
            return Err(Error::Malformed("batch-norm statistics do not match the hidden layers".into()));
        }
        Ok(())
    }

    /// Network and inference-mode run state carrying the saved statistics.
    pub fn instantiate(&self) -> Result<(RiskNetwork, NetworkRunState)> {
        let net = RiskNetwork::new(self.network.clone())?;
        let mut state = net.run_state(Mode::Inference);
        state.batch_norm = self.batch_norm.clone();
        Ok((net, state))
    }

    /// Encodes one set of covariates for prediction. Also returns the names
    /// of categorical covariates whose values were not in the vocabulary.
    pub fn encode(&self, values: &RawCovariates) -> Result<(Record, Vec<String>)> {
        let (x_cont, x_cat, oov) = encode_covariates(values, &self.schema, &self.vocab, &self.norms)?;
        Ok((
            Record {
                x_cont,
                x_cat,
                y: 0.0,
                censored: false,
            },
            oov,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a model document, checking `format_version` before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Malformed(format!("not valid JSON: {e}")))?;
        let version = value
            .get("format_version")
            .ok_or_else(|| Error::Malformed("missing key `format_version`".into()))?
            .as_u64()
            .ok_or_else(|| Error::Malformed("`format_version` must be a non-negative integer".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let artifact: Self = serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
        artifact.validate()?;
        Ok(artifact)
    }
}

pub fn save_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = artifact.to_json()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_json(&text)
}
