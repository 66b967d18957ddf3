use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use vbsurv::dataset::{
    demo_schema, demo_truth, generate_synthetic, load_csv, read_covariates_csv, read_rows_csv, CovariateSchema,
    Dataset, SyntheticConfig,
};
use vbsurv::network::{Mode, NetworkConfig, RiskNetwork};
use vbsurv::predictor::{daily_grid, evaluation_report, predict_survival_batch, PredictConfig, Posterior, ThresholdRule};
use vbsurv::stats::RngStream;
use vbsurv::store::{load_model, save_model, ModelArtifact};
use vbsurv::trainer::{log_grid, lr_range_test, train as fit, AdamConfig, AftLikelihood, ControlVariate, TrainConfig};
use vbsurv::variational::NoiseFamily;

use crate::{CvArg, EvaluateArgs, Failure, FitArgs, LrFindArgs, NoiseArg, PredictArgs, SimulateArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn json_failure(e: serde_json::Error) -> Failure {
    Failure::Numeric(e.to_string())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    let (schema, truth) = match &a.schema {
        Some(p) => (CovariateSchema::load(p)?, None),
        None => (demo_schema(), Some(demo_truth())),
    };
    let mut cfg = SyntheticConfig::new(a.n, schema.clone(), a.seed);
    cfg.censor_window_days = a.censor_window;
    cfg.true_sigma = a.sigma;
    cfg.truth = truth;
    let (ds, truth) = generate_synthetic(&cfg)?;
    ds.write_csv(&a.out)?;
    if let Some(p) = &a.schema_out {
        write_text(p, &schema.to_string())?;
    }
    if let Some(p) = &a.truth_out {
        write_text(p, &serde_json::to_string_pretty(&truth).map_err(json_failure)?)?;
    }
    eprintln!(
        "simulated {} records, {:.1}% censored -> {}",
        ds.len(),
        100.0 * ds.censored_fraction(),
        a.out.display()
    );
    Ok(())
}

fn train_config(f: &FitArgs, max_iter: usize) -> TrainConfig {
    let base = TrainConfig::practical(max_iter);
    TrainConfig {
        adam: AdamConfig {
            learning_rate: f.lr,
            ..AdamConfig::default()
        },
        samples: f.samples,
        antithetic: f.antithetic,
        batch_size: f.batch,
        window: f.window,
        rel_tol: f.rel_tol,
        control_variate: match f.control_variate {
            CvArg::None => ControlVariate::None,
            CvArg::RunningMean => ControlVariate::RunningMean,
            CvArg::Loo => ControlVariate::LeaveOneOut,
        },
        seed: f.seed,
        noise_family: match f.noise_family {
            NoiseArg::LogNormal => NoiseFamily::LogNormal,
            NoiseArg::HalfNormal => NoiseFamily::HalfNormal,
        },
        lr_decay: f.lr_decay.unwrap_or(base.lr_decay),
        init_sigma: f.init_sigma,
        prior_sd: f.prior_sd,
        ..base
    }
}

fn network_config(schema: &CovariateSchema, f: &FitArgs) -> Result<NetworkConfig, Failure> {
    let cfg = NetworkConfig::for_schema(schema, &f.hidden.0)?;
    Ok(if f.no_dropout { cfg.without_dropout() } else { cfg })
}

fn load_training(data: &Path, schema: &Path) -> Result<Dataset, Failure> {
    let schema = CovariateSchema::load(schema)?;
    Ok(load_csv(data, &schema)?)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let ds = load_training(&a.data.data, &a.data.schema)?;
    let cfg = train_config(&a.fit, a.max_iter);
    cfg.validate()?;
    let net_cfg = network_config(&ds.schema, &a.fit)?;
    let net = RiskNetwork::new(net_cfg.clone())?;
    eprintln!(
        "training on {} records ({:.1}% censored), K = {}, up to {} iterations",
        ds.len(),
        100.0 * ds.censored_fraction(),
        net.num_params(),
        cfg.max_iterations
    );
    let start = Instant::now();
    let mut lik = AftLikelihood::new(&net, &ds.records, Mode::Training);
    let out = fit(&mut lik, &cfg)?;
    let state = lik.into_state();
    eprintln!(
        "stopped after {} iterations ({:?}) in {:.1}s, final loss {:.2}, {} skipped",
        out.trace.entries.len(),
        out.trace.stop,
        start.elapsed().as_secs_f64(),
        out.trace.final_loss(cfg.window).unwrap_or(f64::NAN),
        out.trace.skipped
    );
    if let Some(p) = &a.trace_out {
        out.trace.save_csv(p)?;
    }
    let artifact = ModelArtifact::from_training(&ds, net_cfg, &state, &out, &cfg)?;
    save_model(&artifact, &a.out_model)?;
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("--grid must look like lo:hi:points, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let points: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(log_grid(lo, hi, points)?)
}

pub fn lr_find(a: &LrFindArgs) -> Outcome {
    let grid = parse_grid(&a.grid)?;
    let ds = load_training(&a.data.data, &a.data.schema)?;
    let base = train_config(&a.fit, a.iters);
    let net = RiskNetwork::new(network_config(&ds.schema, &a.fit)?)?;
    eprintln!("lr range test: {} rates x {} iterations, K = {}", grid.len(), a.iters, net.num_params());
    let report = lr_range_test(|| Ok(AftLikelihood::new(&net, &ds.records, Mode::Training)), &grid, a.iters, &base)?;
    for e in &report.entries {
        eprintln!("  lr {:.3e}  loss {:.3}", e.learning_rate, e.final_loss);
    }
    eprintln!("best {:.3e}, recommended {:.3e}", report.best, report.recommended);
    write_text(&a.out, &serde_json::to_string_pretty(&report).map_err(json_failure)?)
}

pub fn predict(a: &PredictArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let file = File::open(&a.input).map_err(|e| io_failure(&a.input, e))?;
    let rows = read_covariates_csv(file, &model.schema)?;
    let mut records = Vec::with_capacity(rows.len());
    for (i, values) in rows.iter().enumerate() {
        let (rec, oov) = model.encode(values)?;
        for field in oov {
            eprintln!("row {}: unknown category for `{field}`, using the out-of-vocabulary slot", i + 1);
        }
        records.push(rec);
    }
    let (net, state) = model.instantiate()?;
    let posterior = Posterior::new(&net, &state, &model.latent);
    let config = PredictConfig {
        grid: daily_grid(a.grid_days),
        n_mcmc: a.mc.n_mcmc,
        realisations: a.realisations,
        keep_realisations: false,
    };
    let refs: Vec<_> = records.iter().collect();
    let curves = predict_survival_batch(&posterior, &refs, &config, &mut RngStream::new(a.mc.seed))?;
    let mut w = create(&a.out_curves)?;
    let wr = |w: &mut BufWriter<File>, line: String| writeln!(w, "{line}").map_err(|e| io_failure(&a.out_curves, e));
    wr(&mut w, "row,t,S_hat,lo,hi".into())?;
    for (row, c) in curves.iter().enumerate() {
        for i in 0..c.times.len() {
            wr(&mut w, format!("{},{},{},{},{}", row + 1, c.times[i], c.s_hat[i], c.lower[i], c.upper[i]))?;
        }
    }
    w.flush().map_err(|e| io_failure(&a.out_curves, e))?;
    eprintln!("wrote {} curves to {}", curves.len(), a.out_curves.display());
    Ok(())
}

fn parse_threshold(s: &str) -> Result<ThresholdRule, Failure> {
    if s.eq_ignore_ascii_case("youden") {
        return Ok(ThresholdRule::Youden);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(ThresholdRule::Fixed(v)),
        _ => Err(Failure::Usage(format!("--threshold must be `youden` or a number in (0, 1), got `{s}`"))),
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    let rule = parse_threshold(&a.threshold)?;
    let model = load_model(&a.model)?;
    let file = File::open(&a.data).map_err(|e| io_failure(&a.data, e))?;
    let rows = read_rows_csv(file, &model.schema)?;
    let ds = Dataset::encode_with(
        model.schema.clone(),
        model.vocab.clone(),
        model.norms.clone(),
        rows,
        a.data.display().to_string(),
    )?;
    let (net, state) = model.instantiate()?;
    let posterior = Posterior::new(&net, &state, &model.latent);
    let report = evaluation_report(&posterior, &ds.records, a.horizon, a.mc.n_mcmc, rule, &mut RngStream::new(a.mc.seed))?;
    write_text(&a.out_report, &report.to_json()?)?;
    if let Some(p) = &a.histogram_out {
        report.histogram.write_csv(create(p)?)?;
    }
    let c = &report.classification;
    eprintln!(
        "horizon {} days: accuracy {:.3} (majority {:.3}), AUC {:.3}, threshold {:.3}, {} indeterminate",
        a.horizon, c.accuracy, c.majority_baseline, report.auc, c.threshold, c.indeterminate
    );
    Ok(())
}
