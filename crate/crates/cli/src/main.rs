//! `vbsurv` command-line tool: simulate, train, lr-find, predict, evaluate, serve.

mod commands;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vbsurv", version, about = "Bayesian log-normal AFT survival models fitted by variational inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic right-censored data set as CSV.
    Simulate(SimulateArgs),
    /// Fit a model to a CSV data set and save it as JSON.
    Train(TrainArgs),
    /// Learning-rate range test over a log-spaced grid.
    LrFind(LrFindArgs),
    /// Survival curves for the covariate rows of a CSV file.
    Predict(PredictArgs),
    /// Classification report at a horizon on a labelled CSV file.
    Evaluate(EvaluateArgs),
    /// Serve /health, /schema, /predict and /predict-batch over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Number of records.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Administrative censoring time in days.
    #[arg(long, default_value_t = 180.0)]
    censor_window: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Schema file; without it the built-in demo schema and linear truth are used.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Also write the schema used, in the text schema format.
    #[arg(long)]
    schema_out: Option<PathBuf>,
    /// Also write the ground-truth coefficients as JSON.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Noise scale σ of the generating model.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Training data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema file (`name = continuous | categorical(d)` lines).
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CvArg {
    None,
    RunningMean,
    Loo,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    LogNormal,
    HalfNormal,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// ADAM learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Records per minibatch; 0 uses all records.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    /// Monte Carlo draws per gradient estimate.
    #[arg(long, default_value_t = 4)]
    samples: usize,
    /// Draw network parameters in mirrored pairs.
    #[arg(long)]
    antithetic: bool,
    #[arg(long, value_enum, default_value_t = CvArg::Loo)]
    control_variate: CvArg,
    /// Variational family of the noise scale.
    #[arg(long, value_enum, default_value_t = NoiseArg::LogNormal)]
    noise_family: NoiseArg,
    /// Initial σ_k of every network factor.
    #[arg(long, default_value_t = 0.1)]
    init_sigma: f64,
    /// Per-iteration learning-rate factor [default: tenfold decay over the run].
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Stopping window W (iterations).
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Relative loss change that stops training; 0 runs to the iteration cap.
    #[arg(long, default_value_t = 0.0)]
    rel_tol: f64,
    /// Standard deviation of a N(0, sd²) prior on network parameters [default: flat].
    #[arg(long)]
    prior_sd: Option<f64>,
    /// Hidden layer widths, comma separated; empty for a linear model.
    #[arg(long, default_value = "32,16", value_parser = parse_hidden)]
    hidden: Hidden,
    /// Disable dropout.
    #[arg(long)]
    no_dropout: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output model JSON.
    #[arg(long)]
    out_model: PathBuf,
    /// Iteration cap.
    #[arg(long, default_value_t = 20000)]
    max_iter: usize,
    /// Also write the loss trace as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
struct LrFindArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid `lo:hi:points`, log-spaced.
    #[arg(long, default_value = "1e-4:1e-1:7")]
    grid: String,
    /// Iterations per learning rate.
    #[arg(long, default_value_t = 4000)]
    iters: usize,
    /// Output JSON table.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
struct McArgs {
    /// Posterior-predictive draws per realisation.
    #[arg(long, default_value_t = 200)]
    n_mcmc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    /// CSV with one row of covariates per individual.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV with columns row,t,S_hat,lo,hi.
    #[arg(long)]
    out_curves: PathBuf,
    /// Realisations of the Monte Carlo estimate (band = 5th/95th percentiles).
    #[arg(long, default_value_t = 80)]
    realisations: usize,
    /// Daily grid length.
    #[arg(long, default_value_t = 365)]
    grid_days: usize,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Labelled CSV (covariates plus duration and censoring columns).
    #[arg(long)]
    data: PathBuf,
    /// Horizon in days.
    #[arg(long, default_value_t = 180.0)]
    horizon: f64,
    /// Output report JSON.
    #[arg(long)]
    out_report: PathBuf,
    /// `youden` or a fixed survival threshold in (0, 1).
    #[arg(long, default_value = "youden")]
    threshold: String,
    /// Also write the Ŝ(horizon) histogram as CSV.
    #[arg(long)]
    histogram_out: Option<PathBuf>,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Model JSON; without it prediction endpoints answer 503.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Use this seed for every request that does not carry one.
    #[arg(long)]
    seed: Option<u64>,
    /// Allowed CORS origin [default: any].
    #[arg(long)]
    cors_origin: Option<String>,
}

#[derive(Debug, Clone)]
struct Hidden(Vec<usize>);

fn parse_hidden(s: &str) -> Result<Hidden, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(format!("hidden widths must be positive integers, got `{p}`")),
        })
        .collect::<Result<_, _>>()
        .map(Hidden)
}

/// Exit status taxonomy: 1 usage, 2 data, 3 numeric.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<vbsurv::Error> for Failure {
    fn from(e: vbsurv::Error) -> Self {
        use vbsurv::Error as E;
        match e {
            E::Config(_) => Failure::Usage(e.to_string()),
            E::Numeric(_) | E::DegenerateScale | E::Domain(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Train(a) => commands::train(&a),
        Command::LrFind(a) => commands::lr_find(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Serve(a) => serve::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
