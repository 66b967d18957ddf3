use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "cardinality")]
pub enum CovariateKind {
    Continuous,
    /// Declared number of categories, excluding the out-of-vocabulary slot.
    Categorical(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical(cardinality),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, CovariateKind::Categorical(_))
    }
}

/// Ordered covariate list plus the names of the duration and censoring columns.
///
/// Textual form, one entry per line (`#` starts a comment):
///
/// ```text
/// duration_column = days
/// censor_column = censored
/// age = continuous
/// municipality = categorical(215)
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<Covariate>,
    pub duration_column: String,
    pub censor_column: String,
}

impl CovariateSchema {
    pub fn new(
        covariates: Vec<Covariate>,
        duration_column: impl Into<String>,
        censor_column: impl Into<String>,
    ) -> Result<Self> {
        let schema = Self {
            covariates,
            duration_column: duration_column.into(),
            censor_column: censor_column.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        let mut seen = HashSet::new();
        for name in self
            .covariates
            .iter()
            .map(|c| c.name.as_str())
            .chain([self.duration_column.as_str(), self.censor_column.as_str()])
        {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(name) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for c in &self.covariates {
            if let CovariateKind::Categorical(d) = c.kind {
                if d < 3 {
                    return Err(Error::Schema(format!(
                        "`{}` has cardinality {d}; covariates with fewer than 3 categories \
                         must be declared continuous",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn continuous(&self) -> impl Iterator<Item = &Covariate> {
        self.covariates.iter().filter(|c| !c.is_categorical())
    }

    pub fn categorical(&self) -> impl Iterator<Item = (&Covariate, usize)> {
        self.covariates.iter().filter_map(|c| match c.kind {
            CovariateKind::Categorical(d) => Some((c, d)),
            CovariateKind::Continuous => None,
        })
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous().count()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical().count()
    }

    pub fn get(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }
}

impl FromStr for CovariateSchema {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut covariates = Vec::new();
        let mut duration = None;
        let mut censor = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Schema(format!("line {}: {msg}: `{}`", lineno + 1, raw.trim()));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected `name = kind`"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(bad("missing name"));
            }
            match key {
                "duration_column" => duration = Some(value.to_string()),
                "censor_column" => censor = Some(value.to_string()),
                _ => {
                    let kind = if value == "continuous" {
                        CovariateKind::Continuous
                    } else if let Some(inner) = value
                        .strip_prefix("categorical(")
                        .and_then(|v| v.strip_suffix(')'))
                    {
                        let d = inner
                            .trim()
                            .parse()
                            .map_err(|_| bad("cardinality must be a positive integer"))?;
                        CovariateKind::Categorical(d)
                    } else {
                        return Err(bad("kind must be `continuous` or `categorical(<d>)`"));
                    };
                    covariates.push(Covariate {
                        name: key.to_string(),
                        kind,
                    });
                }
            }
        }
        let duration = duration.ok_or_else(|| Error::Schema("missing `duration_column`".into()))?;
        let censor = censor.ok_or_else(|| Error::Schema("missing `censor_column`".into()))?;
        Self::new(covariates, duration, censor)
    }
}

impl fmt::Display for CovariateSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "duration_column = {}", self.duration_column)?;
        writeln!(f, "censor_column = {}", self.censor_column)?;
        for c in &self.covariates {
            match c.kind {
                CovariateKind::Continuous => writeln!(f, "{} = continuous", c.name)?,
                CovariateKind::Categorical(d) => writeln!(f, "{} = categorical({d})", c.name)?,
            }
        }
        Ok(())
    }
}
