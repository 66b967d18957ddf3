use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{predict_survival_batch, Posterior, PredictConfig, SurvivalCurve};
use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::stats::RngStream;

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.02;

/// Ŝ(horizon) bands as (label, lower, upper); the middle band is closed.
pub const SURVIVAL_BANDS: [(&str, f64, f64); 3] = [("<0.4", 0.0, 0.4), ("0.4-0.61", 0.4, 0.61), (">0.61", 0.61, 1.0)];

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// Event observed on or before the horizon.
    Positive,
    /// Known to survive past the horizon.
    Negative,
    /// Censored before the horizon.
    Indeterminate,
}

pub fn horizon_label(duration_days: f64, censored: bool, horizon: f64) -> Label {
    let slack = TIME_TOL * horizon.abs().max(1.0);
    if !censored && duration_days <= horizon + slack {
        Label::Positive
    } else if censored && duration_days < horizon - slack {
        Label::Indeterminate
    } else {
        Label::Negative
    }
}

pub fn band_of(s: f64) -> usize {
    if s < SURVIVAL_BANDS[0].2 {
        0
    } else if s <= SURVIVAL_BANDS[1].2 {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Predict an event before the horizon iff Ŝ(horizon) < threshold.
    pub threshold: f64,
    pub accuracy: f64,
    /// Accuracy of always predicting the larger class.
    pub majority_baseline: f64,
    pub scored: usize,
    pub indeterminate: usize,
    pub confusion: Confusion,
}

pub fn classify_scores(s_at_horizon: &[f64], labels: &[Label], threshold: f64) -> Result<Classification> {
    if s_at_horizon.len() != labels.len() {
        return Err(Error::Config("survival values and labels differ in length".into()));
    }
    let mut c = Confusion::default();
    let mut indeterminate = 0;
    for (&s, &label) in s_at_horizon.iter().zip(labels) {
        let predicted = s < threshold;
        match (label, predicted) {
            (Label::Indeterminate, _) => indeterminate += 1,
            (Label::Positive, true) => c.true_positive += 1,
            (Label::Positive, false) => c.false_negative += 1,
            (Label::Negative, true) => c.false_positive += 1,
            (Label::Negative, false) => c.true_negative += 1,
        }
    }
    let scored = labels.len() - indeterminate;
    if scored == 0 {
        return Err(Error::Empty("no records with a determinate label at the horizon".into()));
    }
    let positives = c.true_positive + c.false_negative;
    Ok(Classification {
        threshold,
        accuracy: (c.true_positive + c.true_negative) as f64 / scored as f64,
        majority_baseline: positives.max(scored - positives) as f64 / scored as f64,
        scored,
        indeterminate,
        confusion: c,
    })
}

/// Classifies each curve at `horizon` against observed `(duration, censored)`.
pub fn classify_at_horizon(
    curves: &[SurvivalCurve],
    outcomes: &[(f64, bool)],
    horizon: f64,
    threshold: f64,
) -> Result<Classification> {
    if curves.len() != outcomes.len() {
        return Err(Error::Config("curves and outcomes differ in length".into()));
    }
    let s = curves
        .iter()
        .map(|c| c.at(horizon).ok_or_else(|| Error::Config(format!("horizon {horizon} is not on the curve grid"))))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = outcomes.iter().map(|&(t, c)| horizon_label(t, c, horizon)).collect();
    classify_scores(&s, &labels, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Positive iff score ≥ this value.
    pub score_threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// From (0, 0) to (1, 1), one point per unique score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Maximum of TPR − FPR over the unique-score thresholds.
    pub youden_j: f64,
    pub score_threshold: f64,
    /// The same cut on the survival scale: positive iff Ŝ < this value.
    pub survival_threshold: f64,
}

/// ROC over the unique scores (score = 1 − Ŝ), AUC by the trapezoid rule,
/// and the Youden-optimal threshold.
pub fn roc_and_threshold(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Config("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Domain("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        score_threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let point = RocPoint {
            score_threshold: s,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        };
        let j = point.tpr - point.fpr;
        if j > best.0 {
            best = (j, points.len());
        }
        points.push(point);
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    let k = best.1;
    let score_threshold = points[k].score_threshold;
    // midpoint to the next lower score so Ŝ < threshold reproduces the cut
    let cut = match points.get(k + 1) {
        Some(next) => (score_threshold + next.score_threshold) / 2.0,
        // lowest score: every record is positive
        None => score_threshold - 0.01,
    };
    Ok(RocResult {
        points,
        auc,
        youden_j: best.0,
        score_threshold,
        survival_threshold: 1.0 - cut,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ThresholdRule {
    Youden,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub positive: usize,
    pub negative: usize,
    pub indeterminate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn build(s_at_horizon: &[f64], labels: &[Label]) -> Self {
        let n_bins = (1.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
        let mut bins: Vec<HistogramBin> = (0..n_bins)
            .map(|i| HistogramBin {
                lower: i as f64 * HISTOGRAM_BIN_WIDTH,
                upper: (i + 1) as f64 * HISTOGRAM_BIN_WIDTH,
                positive: 0,
                negative: 0,
                indeterminate: 0,
            })
            .collect();
        for (&s, &l) in s_at_horizon.iter().zip(labels) {
            let b = ((s / HISTOGRAM_BIN_WIDTH).floor() as usize).min(n_bins - 1);
            match l {
                Label::Positive => bins[b].positive += 1,
                Label::Negative => bins[b].negative += 1,
                Label::Indeterminate => bins[b].indeterminate += 1,
            }
        }
        Self {
            bin_width: HISTOGRAM_BIN_WIDTH,
            bins,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lower", "upper", "positive", "negative", "indeterminate"])?;
        for b in &self.bins {
            w.write_record(&[
                format!("{:.2}", b.lower),
                format!("{:.2}", b.upper),
                b.positive.to_string(),
                b.negative.to_string(),
                b.indeterminate.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<histogram>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCount {
    pub band: String,
    pub positive: usize,
    pub negative: usize,
    pub indeterminate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizon_days: f64,
    pub n_records: usize,
    pub n_mcmc: usize,
    pub threshold_rule: ThresholdRule,
    pub classification: Classification,
    pub auc: f64,
    pub youden_j: f64,
    pub roc: Vec<RocPoint>,
    pub histogram: Histogram,
    pub bands: Vec<BandCount>,
    pub s_at_horizon: Vec<f64>,
    pub labels: Vec<Label>,
}

impl EvalReport {
    /// Assembles the report from per-record Ŝ(horizon) and labels.
    pub fn from_scores(
        s_at_horizon: Vec<f64>,
        labels: Vec<Label>,
        horizon_days: f64,
        n_mcmc: usize,
        rule: ThresholdRule,
    ) -> Result<Self> {
        if s_at_horizon.is_empty() {
            return Err(Error::Empty("evaluation set is empty".into()));
        }
        let (scores, truth): (Vec<f64>, Vec<bool>) = s_at_horizon
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l != Label::Indeterminate)
            .map(|(s, l)| (1.0 - s, *l == Label::Positive))
            .unzip();
        let roc = roc_and_threshold(&scores, &truth)?;
        let threshold = match rule {
            ThresholdRule::Youden => roc.survival_threshold,
            ThresholdRule::Fixed(t) => t,
        };
        let classification = classify_scores(&s_at_horizon, &labels, threshold)?;
        let mut bands: Vec<BandCount> = SURVIVAL_BANDS
            .iter()
            .map(|(name, _, _)| BandCount {
                band: name.to_string(),
                positive: 0,
                negative: 0,
                indeterminate: 0,
            })
            .collect();
        for (&s, &l) in s_at_horizon.iter().zip(&labels) {
            let b = &mut bands[band_of(s)];
            match l {
                Label::Positive => b.positive += 1,
                Label::Negative => b.negative += 1,
                Label::Indeterminate => b.indeterminate += 1,
            }
        }
        Ok(Self {
            horizon_days,
            n_records: s_at_horizon.len(),
            n_mcmc,
            threshold_rule: rule,
            classification,
            auc: roc.auc,
            youden_j: roc.youden_j,
            roc: roc.points,
            histogram: Histogram::build(&s_at_horizon, &labels),
            bands,
            s_at_horizon,
            labels,
        })
    }

    /// Pretty JSON; the +∞ threshold of the first ROC point becomes null.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ŝ(horizon) for every record, classification, ROC, histogram and bands.
pub fn evaluation_report(
    posterior: &Posterior<'_>,
    records: &[Record],
    horizon_days: f64,
    n_mcmc: usize,
    rule: ThresholdRule,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    if !(horizon_days > 0.0 && horizon_days.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon_days}")));
    }
    let config = PredictConfig {
        grid: vec![horizon_days],
        n_mcmc,
        realisations: 1,
        keep_realisations: false,
    };
    let refs: Vec<&Record> = records.iter().collect();
    let mut s = Vec::with_capacity(records.len());
    for chunk in refs.chunks(512) {
        s.extend(predict_survival_batch(posterior, chunk, &config, rng)?.iter().map(|c| c.s_hat[0]));
    }
    let labels = records
        .iter()
        .map(|r| horizon_label(r.duration_days(), r.censored, horizon_days))
        .collect();
    EvalReport::from_scores(s, labels, horizon_days, n_mcmc, rule)
}
