use serde::{Deserialize, Serialize};

use super::likelihood::Likelihood;
use super::{train, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrRangeEntry {
    pub learning_rate: f64,
    /// Mean loss over the last stopping window; +∞ when the run diverged.
    #[serde(with = "lossy_f64")]
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRangeReport {
    pub iterations: usize,
    pub entries: Vec<LrRangeEntry>,
    pub best: f64,
    pub recommended: f64,
}

impl LrRangeReport {
    /// Whether exactly one entry attains the smallest finite loss.
    pub fn unique_minimum(&self) -> bool {
        let best = self.entries.iter().map(|e| e.final_loss).fold(f64::INFINITY, f64::min);
        best.is_finite() && self.entries.iter().filter(|e| e.final_loss == best).count() == 1
    }
}

/// `points` log-spaced learning rates from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 {
        return Err(Error::Config(format!("invalid grid {lo}:{hi}:{points}")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect())
}

/// Trains a fresh model for `iterations` steps at each learning rate and
/// recommends a tenth of the rate with the lowest final loss. Early stopping
/// is disabled so every point gets the same budget.
pub fn lr_range_test<M, F>(mut factory: F, grid: &[f64], iterations: usize, base: &TrainConfig) -> Result<LrRangeReport>
where
    M: Likelihood,
    F: FnMut() -> Result<M>,
{
    if grid.is_empty() {
        return Err(Error::Config("learning-rate grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("learning-rate grid must be strictly ascending".into()));
    }
    let mut entries = Vec::with_capacity(grid.len());
    for &lr in grid {
        let mut cfg = base.clone();
        cfg.adam.learning_rate = lr;
        cfg.max_iterations = iterations;
        cfg.rel_tol = 0.0;
        let mut model = factory()?;
        let final_loss = match train(&mut model, &cfg) {
            Ok(out) => out.trace.final_loss(cfg.window).filter(|l| l.is_finite()).unwrap_or(f64::INFINITY),
            Err(Error::Numeric(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        entries.push(LrRangeEntry {
            learning_rate: lr,
            final_loss,
        });
    }
    let best = entries
        .iter()
        .filter(|e| e.final_loss.is_finite())
        .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss))
        .ok_or_else(|| Error::Numeric("every learning rate in the grid diverged".into()))?
        .learning_rate;
    Ok(LrRangeReport {
        iterations,
        entries,
        best,
        recommended: best / 10.0,
    })
}

/// Serialises non-finite losses as the strings "inf" / "nan" so the table
/// stays valid JSON.
mod lossy_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad loss value {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RngStream;
    use crate::trainer::{block_means, smoothed_monotone, AdamConfig, NormalMeanLikelihood};

    fn toy() -> Result<NormalMeanLikelihood> {
        let mut rng = RngStream::new(21);
        Ok(NormalMeanLikelihood {
            observations: (0..100).map(|_| -0.7 + rng.standard_normal()).collect(),
            sigma: 1.0,
        })
    }

    fn base() -> TrainConfig {
        TrainConfig {
            samples: 4,
            seed: 8,
            ..Default::default()
        }
    }

    #[test]
    fn single_point_grid() {
        let r = lr_range_test(toy, &[0.02], 50, &base()).unwrap();
        assert_eq!(r.recommended, 0.002);
        assert_eq!(r.entries.len(), 1);
    }

    #[test]
    fn grid_validation() {
        assert!(lr_range_test(toy, &[], 10, &base()).is_err());
        assert!(lr_range_test(toy, &[0.1, 0.01], 10, &base()).is_err());
        assert!(log_grid(0.0, 1.0, 3).is_err());
        let g = log_grid(1e-3, 1e-1, 3).unwrap();
        assert!((g[1] - 1e-2).abs() < 1e-15);
        assert!((g[2] - 1e-1).abs() < 1e-15);
    }

    #[test]
    fn huge_rate_is_worst_and_recommendation_decreases_loss() {
        let grid = [1e-3, 1e-2, 1e-1, 1e3];
        let r = lr_range_test(toy, &grid, 600, &base()).unwrap();
        let worst = r.entries.iter().map(|e| e.final_loss).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.entries[3].final_loss, worst, "{:?}", r.entries);
        assert!(r.best < 1e3);

        let cfg = TrainConfig {
            adam: AdamConfig {
                learning_rate: r.recommended,
                ..Default::default()
            },
            max_iterations: 200,
            rel_tol: 0.0,
            ..base()
        };
        let out = train(&mut toy().unwrap(), &cfg).unwrap();
        let losses = out.trace.losses();
        assert!(smoothed_monotone(&losses, 50), "{:?}", block_means(&losses, 50));
    }

    #[test]
    fn infinite_loss_round_trips_through_json() {
        let r = LrRangeReport {
            iterations: 1,
            entries: vec![LrRangeEntry {
                learning_rate: 1.0,
                final_loss: f64::INFINITY,
            }],
            best: 1.0,
            recommended: 0.1,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"inf\""));
        let back: LrRangeReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.entries[0].final_loss, f64::INFINITY);
        assert!(!back.unique_minimum());
    }
}
