use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use mcov::cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "mcov", version, about = "Multidimensional functional covariance estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the covariance of a CSV dataset.
    Fit(Opts),
    /// Run the simulation benchmark.
    Simulate(Opts),
    /// L2 eigen-analysis of a saved fit.
    Eigen(Opts),
    /// Cross-validate (lambda, beta) over a grid.
    Cv(Opts),
}

/// Every flag overrides the config-file key of the same name.
#[derive(Args, Default)]
struct Opts {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long)]
    decay_exponent: Option<f64>,
    #[arg(long)]
    truncation_order: Option<usize>,
    #[arg(long)]
    include_constant: Option<bool>,
    #[arg(long)]
    constant_coefficient: Option<f64>,

    /// Relative eigenvalue cutoff of the Gram factors.
    #[arg(long)]
    gram_tol: Option<f64>,
    #[arg(long)]
    rank_cap: Option<usize>,
    #[arg(long)]
    max_core_size: Option<usize>,

    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// relative | absolute
    #[arg(long)]
    eta_scaling: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    primal_tol: Option<f64>,
    #[arg(long)]
    rank_threshold: Option<f64>,
    #[arg(long)]
    accelerate: Option<bool>,
    #[arg(long)]
    restart: Option<bool>,
    #[arg(long)]
    adaptive_eta: Option<bool>,
    #[arg(long)]
    disable_one_way: Option<bool>,

    /// zero | kernel-ridge
    #[arg(long)]
    mean_mode: Option<String>,
    #[arg(long)]
    ridge: Option<f64>,

    /// Comma-separated lambda grid.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,

    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// cv | fixed
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    aise_grid: Option<usize>,

    #[arg(long)]
    container: Option<PathBuf>,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    eigen_grid: Option<usize>,
    #[arg(long)]
    marginal_points: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn keyword<T: DeserializeOwned>(flag: &str, value: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| format!("invalid value {value:?} for --{flag}"))
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

fn resolve(command: Command, o: Opts) -> Result<RunConfig, String> {
    let mut c = match &o.config {
        Some(p) => RunConfig::from_json_file(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => RunConfig::default(),
    };
    c.command = command;
    if o.input.is_some() {
        c.input = o.input;
    }
    set!(c.output, o.output);
    set!(c.kernel.decay_exponent, o.decay_exponent);
    set!(c.kernel.truncation_order, o.truncation_order);
    set!(c.kernel.include_constant, o.include_constant);
    set!(c.kernel.constant_coefficient, o.constant_coefficient);
    set!(c.grams.tol, o.gram_tol);
    set!(c.grams.rank_cap, o.rank_cap);
    set!(c.grams.max_core_size, o.max_core_size);
    set!(c.fit.lambda, o.lambda);
    set!(c.fit.beta, o.beta);
    set!(c.fit.eta, o.eta);
    if let Some(s) = &o.eta_scaling {
        c.fit.eta_scaling = keyword("eta-scaling", s)?;
    }
    set!(c.fit.max_iters, o.max_iters);
    set!(c.fit.tol, o.tol);
    set!(c.fit.primal_tol, o.primal_tol);
    set!(c.fit.rank_threshold, o.rank_threshold);
    set!(c.fit.accelerate, o.accelerate);
    set!(c.fit.restart, o.restart);
    set!(c.fit.adaptive_eta, o.adaptive_eta);
    set!(c.fit.disable_one_way, o.disable_one_way);
    if let Some(s) = &o.mean_mode {
        c.mean.mode = keyword("mean-mode", s)?;
    }
    if o.ridge.is_some() {
        c.mean.ridge = o.ridge;
    }
    set!(c.cv.grid.lambdas, o.lambdas);
    set!(c.cv.grid.betas, o.betas);
    set!(c.cv.folds, o.folds);
    set!(c.sim.setting, o.setting);
    set!(c.sim.n, o.n);
    set!(c.sim.m, o.m);
    set!(c.sim.sigma, o.sigma);
    set!(c.sim.reps, o.reps);
    if let Some(s) = &o.protocol {
        c.sim.protocol = keyword("protocol", s)?;
    }
    set!(c.sim.aise_grid, o.aise_grid);
    if o.container.is_some() {
        c.eigen.container = o.container;
    }
    if o.sidecar.is_some() {
        c.eigen.sidecar = o.sidecar;
    }
    set!(c.eigen.grid, o.eigen_grid);
    set!(c.eigen.marginal_points, o.marginal_points);
    set!(c.seed, o.seed);
    set!(c.threads, o.threads);
    if c.output.as_os_str().is_empty() {
        c.output = PathBuf::from(".");
    }
    Ok(c)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, opts) = match cli.command {
        Cmd::Fit(o) => (Command::Fit, o),
        Cmd::Simulate(o) => (Command::Simulate, o),
        Cmd::Eigen(o) => (Command::Eigen, o),
        Cmd::Cv(o) => (Command::Cv, o),
    };
    let config = match resolve(command, opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if config.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&config) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
