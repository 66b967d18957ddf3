//! The risk function h_z(x): categorical embeddings concatenated with
//! normalized continuous covariates, followed by Linear → ReLU → Dropout →
//! BatchNorm blocks and a final scalar Linear layer.
//!
//! All trainable values live in one flat vector `z` described by a
//! [`ParameterLayout`]. Batch normalization has no affine parameters; its
//! running statistics are kept in a separate [`NetworkRunState`].

use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateSchema, Record};
use crate::error::{Error, Result};
use crate::stats::RngStream;

/// Embedding width for a categorical covariate with `d` categories:
/// `min(50, d/2 + 1)`.
pub fn embedding_dim(d: usize) -> Result<usize> {
    if d < 3 {
        return Err(Error::Config(format!(
            "embedding needs at least 3 categories, got {d}"
        )));
    }
    Ok((d / 2 + 1).min(50))
}

pub const DEFAULT_HIDDEN: [usize; 2] = [200, 70];
pub const DEFAULT_EMBEDDING_DROPOUT: f64 = 0.6;
pub const DEFAULT_HIDDEN_DROPOUT: [f64; 2] = [0.6, 0.4];
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_continuous: usize,
    /// Declared cardinality per categorical covariate (schema order).
    pub cardinalities: Vec<usize>,
    pub embedding_dims: Vec<usize>,
    pub hidden: Vec<usize>,
    pub embedding_dropout: f64,
    /// One rate per hidden layer.
    pub hidden_dropout: Vec<f64>,
    pub batch_norm: bool,
}

impl NetworkConfig {
    /// Architecture for `schema` with the given hidden widths. Dropout rates
    /// follow the default pattern: 0.6 after the embeddings and the first
    /// hidden layer, 0.4 after every later one.
    pub fn for_schema(schema: &CovariateSchema, hidden: &[usize]) -> Result<Self> {
        schema.validate()?;
        let cardinalities: Vec<usize> = schema.categorical().map(|(_, d)| d).collect();
        let embedding_dims = cardinalities
            .iter()
            .map(|&d| embedding_dim(d))
            .collect::<Result<_>>()?;
        let hidden_dropout = (0..hidden.len())
            .map(|i| DEFAULT_HIDDEN_DROPOUT[i.min(1)])
            .collect();
        let config = Self {
            n_continuous: schema.n_continuous(),
            cardinalities,
            embedding_dims,
            hidden: hidden.to_vec(),
            embedding_dropout: DEFAULT_EMBEDDING_DROPOUT,
            hidden_dropout,
            batch_norm: true,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn without_dropout(mut self) -> Self {
        self.embedding_dropout = 0.0;
        self.hidden_dropout.iter_mut().for_each(|r| *r = 0.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinalities.len() != self.embedding_dims.len() {
            return Err(Error::Config("one embedding width per categorical covariate".into()));
        }
        if self.n_continuous + self.cardinalities.len() == 0 {
            return Err(Error::Config("network needs at least one input covariate".into()));
        }
        if self.embedding_dims.iter().chain(&self.hidden).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.hidden_dropout.len() != self.hidden.len() {
            return Err(Error::Config("one dropout rate per hidden layer".into()));
        }
        if !std::iter::once(&self.embedding_dropout)
            .chain(&self.hidden_dropout)
            .all(|r| (0.0..1.0).contains(r))
        {
            return Err(Error::Config("dropout rates must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn embedded_width(&self) -> usize {
        self.embedding_dims.iter().sum()
    }

    /// Width of the first linear layer's input.
    pub fn input_width(&self) -> usize {
        self.embedded_width() + self.n_continuous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Embedding,
    Weight,
    Bias,
}

/// A `rows × cols` row-major block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Contiguous segments covering `[0, total)`: embedding tables (with an
/// extra OOV row each), then weight and bias for every linear layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub segments: Vec<Segment>,
    pub input_width: usize,
    pub total: usize,
}

impl ParameterLayout {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind, rows, cols| {
            segments.push(Segment {
                name,
                kind,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        for (j, (&d, &n)) in config.cardinalities.iter().zip(&config.embedding_dims).enumerate() {
            push(format!("embedding{j}"), SegmentKind::Embedding, d + 1, n);
        }
        let mut width = config.input_width();
        for (l, &out) in config.hidden.iter().chain(std::iter::once(&1)).enumerate() {
            push(format!("linear{l}.weight"), SegmentKind::Weight, out, width);
            push(format!("linear{l}.bias"), SegmentKind::Bias, 1, out);
            width = out;
        }
        Ok(Self {
            segments,
            input_width: config.input_width(),
            total: offset,
        })
    }

    /// Number of parameters K.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Builds the layout for `config` after checking it matches `schema`.
pub fn build_layout(schema: &CovariateSchema, config: &NetworkConfig) -> Result<ParameterLayout> {
    schema.validate()?;
    let cards: Vec<usize> = schema.categorical().map(|(_, d)| d).collect();
    if cards != config.cardinalities || schema.n_continuous() != config.n_continuous {
        return Err(Error::Config("network config does not match the covariate schema".into()));
    }
    ParameterLayout::new(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct PendingStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    batches: usize,
}

/// Batch-norm running statistics and the train/inference switch.
///
/// Both modes normalize with the running statistics. In training mode each
/// forward pass also records its batch statistics; [`commit`](Self::commit)
/// folds their average into the running values with momentum 0.1. The
/// trainer commits once per iteration so that all Monte Carlo draws of one
/// iteration see the same normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkRunState {
    pub batch_norm: Vec<BatchNormStats>,
    pub mode: Mode,
    #[serde(skip)]
    pending: Vec<PendingStats>,
}

impl PartialEq for NetworkRunState {
    fn eq(&self, other: &Self) -> bool {
        self.batch_norm == other.batch_norm && self.mode == other.mode
    }
}

impl NetworkRunState {
    pub fn new(config: &NetworkConfig, mode: Mode) -> Self {
        let batch_norm = if config.batch_norm {
            config
                .hidden
                .iter()
                .map(|&w| BatchNormStats {
                    mean: vec![0.0; w],
                    var: vec![1.0; w],
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            batch_norm,
            mode,
            pending: Vec::new(),
        }
    }

    pub fn inference(mut self) -> Self {
        self.mode = Mode::Inference;
        self
    }

    /// Folds pending batch statistics into the running statistics.
    pub fn commit(&mut self) {
        for (stats, p) in self.batch_norm.iter_mut().zip(self.pending.drain(..)) {
            if p.batches == 0 {
                continue;
            }
            let k = p.batches as f64;
            for i in 0..stats.mean.len() {
                stats.mean[i] =
                    (1.0 - BATCH_NORM_MOMENTUM) * stats.mean[i] + BATCH_NORM_MOMENTUM * p.mean[i] / k;
                stats.var[i] =
                    (1.0 - BATCH_NORM_MOMENTUM) * stats.var[i] + BATCH_NORM_MOMENTUM * p.var[i] / k;
            }
        }
    }

    /// Drops recorded batch statistics without applying them.
    pub fn discard_pending(&mut self) {
        self.pending.clear();
    }

    fn record(&mut self, layer: usize, mean: &[f64], var: &[f64]) {
        if self.pending.len() < self.batch_norm.len() {
            self.pending.resize_with(self.batch_norm.len(), PendingStats::default);
        }
        let p = &mut self.pending[layer];
        if p.batches == 0 {
            p.mean = mean.to_vec();
            p.var = var.to_vec();
        } else {
            p.mean.iter_mut().zip(mean).for_each(|(a, b)| *a += b);
            p.var.iter_mut().zip(var).for_each(|(a, b)| *a += b);
        }
        p.batches += 1;
    }
}

#[derive(Debug, Clone)]
struct Linear {
    weight: usize,
    bias: usize,
    input: usize,
    output: usize,
}

/// The network architecture with precomputed offsets into `z`.
#[derive(Debug, Clone)]
pub struct RiskNetwork {
    config: NetworkConfig,
    layout: ParameterLayout,
    embeddings: Vec<usize>,
    layers: Vec<Linear>,
}

impl RiskNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let layout = ParameterLayout::new(&config)?;
        let n_emb = config.cardinalities.len();
        let embeddings = layout.segments[..n_emb].iter().map(|s| s.offset).collect();
        let layers = layout.segments[n_emb..]
            .chunks(2)
            .map(|pair| Linear {
                weight: pair[0].offset,
                bias: pair[1].offset,
                input: pair[0].cols,
                output: pair[0].rows,
            })
            .collect();
        Ok(Self {
            config,
            layout,
            embeddings,
            layers,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn run_state(&self, mode: Mode) -> NetworkRunState {
        NetworkRunState::new(&self.config, mode)
    }

    /// h_z(x) for a single record.
    pub fn forward(&self, z: &[f64], record: &Record, state: &mut NetworkRunState, rng: &mut RngStream) -> Result<f64> {
        Ok(self.forward_batch(z, &[record], state, rng)?[0])
    }

    /// h_z(x) for every record in `batch`. In training mode dropout masks are
    /// drawn from `rng` and batch statistics are recorded in `state`; in
    /// inference mode the output is a deterministic function of `z` and the
    /// running statistics, and `rng` is not touched.
    pub fn forward_batch(
        &self,
        z: &[f64],
        batch: &[&Record],
        state: &mut NetworkRunState,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        if z.len() != self.layout.total {
            return Err(Error::Config(format!(
                "parameter vector has length {}, network expects {}",
                z.len(),
                self.layout.total
            )));
        }
        let training = state.mode == Mode::Training;
        let n = batch.len();
        let cfg = &self.config;
        let in_w = cfg.input_width();

        let mut act = vec![0.0; n * in_w];
        let emb_keep = 1.0 - cfg.embedding_dropout;
        for (r, rec) in batch.iter().enumerate() {
            if rec.x_cat.len() != cfg.cardinalities.len() || rec.x_cont.len() != cfg.n_continuous {
                return Err(Error::Config("record does not match the network inputs".into()));
            }
            let row = &mut act[r * in_w..(r + 1) * in_w];
            let mut col = 0;
            for (j, &idx) in rec.x_cat.iter().enumerate() {
                let rows = cfg.cardinalities[j] + 1;
                if idx >= rows {
                    return Err(Error::CategoryOutOfRange {
                        covariate: format!("categorical #{j}"),
                        index: idx,
                        rows,
                    });
                }
                let width = cfg.embedding_dims[j];
                let start = self.embeddings[j] + idx * width;
                for k in 0..width {
                    row[col + k] = if training && cfg.embedding_dropout > 0.0 {
                        if rng.uniform() < emb_keep {
                            z[start + k] / emb_keep
                        } else {
                            0.0
                        }
                    } else {
                        z[start + k]
                    };
                }
                col += width;
            }
            row[col..].copy_from_slice(&rec.x_cont);
        }

        let mut width = in_w;
        for (l, lin) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let w = &z[lin.weight..lin.weight + lin.input * lin.output];
            let b = &z[lin.bias..lin.bias + lin.output];
            let mut out = vec![0.0; n * lin.output];
            for r in 0..n {
                let a = &act[r * width..(r + 1) * width];
                let o = &mut out[r * lin.output..(r + 1) * lin.output];
                for (j, oj) in o.iter_mut().enumerate() {
                    let wj = &w[j * lin.input..(j + 1) * lin.input];
                    let mut s = b[j];
                    for (wi, ai) in wj.iter().zip(a) {
                        s += wi * ai;
                    }
                    *oj = if last { s } else { s.max(0.0) };
                }
            }
            if !last {
                let rate = cfg.hidden_dropout[l];
                if training && rate > 0.0 {
                    let keep = 1.0 - rate;
                    for v in out.iter_mut() {
                        *v = if rng.uniform() < keep { *v / keep } else { 0.0 };
                    }
                }
                if cfg.batch_norm {
                    self.batch_norm(l, &mut out, n, lin.output, state);
                }
            }
            act = out;
            width = lin.output;
        }
        if let Some(bad) = act.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite network output for record {bad}")));
        }
        Ok(act)
    }

    fn batch_norm(&self, layer: usize, act: &mut [f64], n: usize, width: usize, state: &mut NetworkRunState) {
        if state.mode == Mode::Training && n > 0 {
            let mut mean = vec![0.0; width];
            for row in act.chunks(width) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; width];
            for row in act.chunks(width) {
                for i in 0..width {
                    var[i] += (row[i] - mean[i]).powi(2);
                }
            }
            let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
            var.iter_mut().for_each(|v| *v /= denom);
            state.record(layer, &mean, &var);
        }
        let stats = &state.batch_norm[layer];
        let scale: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        for row in act.chunks_mut(width) {
            for i in 0..width {
                row[i] = (row[i] - stats.mean[i]) * scale[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(text: &str) -> CovariateSchema {
        format!("duration_column = days\ncensor_column = c\n{text}").parse().unwrap()
    }

    fn record(x_cont: Vec<f64>, x_cat: Vec<usize>) -> Record {
        Record {
            x_cont,
            x_cat,
            y: 0.0,
            censored: false,
        }
    }

    #[test]
    fn embedding_rule() {
        assert_eq!(embedding_dim(3772).unwrap(), 50);
        assert_eq!(embedding_dim(5).unwrap(), 3);
        assert_eq!(embedding_dim(109).unwrap(), 50);
        assert_eq!(embedding_dim(3).unwrap(), 2);
        assert!(embedding_dim(2).is_err());
    }

    #[test]
    fn hand_counted_layout() {
        let s = schema("x = continuous\n");
        let cfg = NetworkConfig::for_schema(&s, &[2, 2]).unwrap();
        let layout = build_layout(&s, &cfg).unwrap();
        assert_eq!(layout.total, (2 + 2) + (2 * 2 + 2) + (2 + 1));
        assert_eq!(layout.total, 13);
        assert_eq!(layout.input_width, 1);
        // contiguous cover of [0, K)
        let mut next = 0;
        for seg in &layout.segments {
            assert_eq!(seg.offset, next);
            next += seg.len();
        }
        assert_eq!(next, layout.total);
    }

    #[test]
    fn layout_with_embeddings() {
        let s = schema("a = continuous\ng = categorical(5)\nh = categorical(10)\n");
        let cfg = NetworkConfig::for_schema(&s, &[4]).unwrap();
        let layout = build_layout(&s, &cfg).unwrap();
        assert_eq!(cfg.embedding_dims, vec![3, 6]);
        assert_eq!(layout.input_width, 1 + 3 + 6);
        assert_eq!(layout.total, 6 * 3 + 11 * 6 + (10 * 4 + 4) + (4 + 1));
        let other = schema("a = continuous\n");
        assert!(build_layout(&other, &cfg).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let s = schema("x = continuous\n");
        assert!(NetworkConfig::for_schema(&s, &[0]).is_err());
        let mut cfg = NetworkConfig::for_schema(&s, &[3]).unwrap();
        cfg.hidden_dropout = vec![1.0];
        assert!(RiskNetwork::new(cfg).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let s = schema("x = continuous\ng = categorical(4)\n");
        let net = RiskNetwork::new(NetworkConfig::for_schema(&s, &[5, 3]).unwrap()).unwrap();
        let z = vec![0.0; net.num_params()];
        let mut st = net.run_state(Mode::Inference);
        let mut rng = RngStream::new(1);
        let h = net.forward(&z, &record(vec![2.5], vec![3]), &mut st, &mut rng).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn single_affine_layer() {
        let s = schema("x = continuous\n");
        let mut cfg = NetworkConfig::for_schema(&s, &[]).unwrap();
        cfg.batch_norm = false;
        let net = RiskNetwork::new(cfg).unwrap();
        assert_eq!(net.num_params(), 2);
        let mut st = net.run_state(Mode::Training);
        let mut rng = RngStream::new(1);
        let h = net.forward(&[1.5, -0.25], &record(vec![2.0], vec![]), &mut st, &mut rng).unwrap();
        assert_eq!(h, 1.5 * 2.0 - 0.25);
    }

    #[test]
    fn out_of_range_category_is_an_error() {
        let s = schema("g = categorical(4)\n");
        let net = RiskNetwork::new(NetworkConfig::for_schema(&s, &[2]).unwrap()).unwrap();
        let z = vec![0.1; net.num_params()];
        let mut st = net.run_state(Mode::Inference);
        let mut rng = RngStream::new(1);
        assert!(net.forward(&z, &record(vec![], vec![4]), &mut st, &mut rng).is_ok());
        assert!(matches!(
            net.forward(&z, &record(vec![], vec![5]), &mut st, &mut rng),
            Err(Error::CategoryOutOfRange { .. })
        ));
    }

    fn random_setup(seed: u64) -> (RiskNetwork, Vec<f64>, Vec<Record>) {
        let s = schema("a = continuous\nb = continuous\ng = categorical(6)\n");
        let net = RiskNetwork::new(NetworkConfig::for_schema(&s, &[8, 4]).unwrap()).unwrap();
        let mut rng = RngStream::new(seed);
        let z: Vec<f64> = (0..net.num_params()).map(|_| rng.standard_normal()).collect();
        let recs = (0..6)
            .map(|i| record(vec![rng.standard_normal(), rng.standard_normal()], vec![i % 7]))
            .collect();
        (net, z, recs)
    }

    #[test]
    fn inference_is_deterministic_and_permutation_equivariant() {
        let (net, z, recs) = random_setup(11);
        let mut st = net.run_state(Mode::Inference);
        let mut rng = RngStream::new(0);
        let refs: Vec<&Record> = recs.iter().collect();
        let a = net.forward_batch(&z, &refs, &mut st, &mut rng).unwrap();
        let b = net.forward_batch(&z, &refs, &mut st, &mut rng).unwrap();
        assert_eq!(a, b);
        let rev: Vec<&Record> = recs.iter().rev().collect();
        let c = net.forward_batch(&z, &rev, &mut st, &mut rng).unwrap();
        assert_eq!(a.iter().rev().copied().collect::<Vec<_>>(), c);
        // batch result equals per-record result
        for (r, &h) in recs.iter().zip(&a) {
            assert_eq!(net.forward(&z, r, &mut st, &mut rng).unwrap(), h);
        }
    }

    #[test]
    fn oov_row_is_a_real_parameter_row() {
        let (net, mut z, _) = random_setup(5);
        let mut st = net.run_state(Mode::Inference);
        let mut rng = RngStream::new(0);
        let r = record(vec![0.3, -0.2], vec![0]);
        let before = net.forward(&z, &r, &mut st, &mut rng).unwrap();
        let emb = net.layout().segments[0].offset;
        z[emb] += 1.0;
        let after = net.forward(&z, &r, &mut st, &mut rng).unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn finite_difference_stability() {
        // Forward differences at two step sizes agree: the map is locally
        // Lipschitz in each coordinate.
        let (net, z, recs) = random_setup(23);
        let mut st = net.run_state(Mode::Inference);
        let mut rng = RngStream::new(0);
        let mut pick = RngStream::new(99);
        let eps = 1e-6;
        for _ in 0..40 {
            let k = pick.below(z.len());
            let rec = &recs[pick.below(recs.len())];
            let f = |zz: &[f64], st: &mut NetworkRunState, rng: &mut RngStream| net.forward(zz, rec, st, rng).unwrap();
            let base = f(&z, &mut st, &mut rng);
            let mut z1 = z.clone();
            z1[k] += eps;
            let mut z2 = z.clone();
            z2[k] += 2.0 * eps;
            let d1 = (f(&z1, &mut st, &mut rng) - base) / eps;
            let d2 = (f(&z2, &mut st, &mut rng) - base) / (2.0 * eps);
            assert!((d1 - d2).abs() <= 1e-4 * d1.abs().max(1.0), "k={k} d1={d1} d2={d2}");
        }
    }

    #[test]
    fn training_mode_records_and_commits_batch_stats() {
        let (net, z, recs) = random_setup(8);
        let mut st = net.run_state(Mode::Training);
        let mut rng = RngStream::new(3);
        let refs: Vec<&Record> = recs.iter().collect();
        let before = st.batch_norm.clone();
        net.forward_batch(&z, &refs, &mut st, &mut rng).unwrap();
        assert_eq!(st.batch_norm, before, "stats only change on commit");
        st.commit();
        assert_ne!(st.batch_norm, before);
        assert!(st.batch_norm.iter().all(|b| b.var.iter().all(|&v| v >= 0.0)));
        // dropout makes training outputs stochastic
        let a = net.forward_batch(&z, &refs, &mut st, &mut rng).unwrap();
        let b = net.forward_batch(&z, &refs, &mut st, &mut rng).unwrap();
        assert_ne!(a, b);
    }
}
