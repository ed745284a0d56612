//! Run configuration and the subcommand drivers behind the `mcov` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{load_fit, save_fit};
use crate::dataset::{
    cross_products, fit_mean, load_csv, make_folds, select_ridge, FunctionalDataset, MeanMode,
};
use crate::error::{invalid, Result};
use crate::kernel::{GramOptions, KernelSpec};
use crate::sim::{run_benchmark, BenchmarkOptions, FitProtocol, SimSetting};
use crate::solver::{cv_select, precompute, rank_report, CvGrid, FitConfig, GramSet, Solver};
use crate::spectral::{
    eigenfunctions_csv, l2_eigensystem, marginal_basis, marginal_csv, regular_grid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Fit,
    Simulate,
    Eigen,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    #[default]
    Cv,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanConfig {
    pub mode: MeanMode,
    /// Fixed ridge; selected by 5-fold CV over `ridge_grid` when absent.
    pub ridge: Option<f64>,
    pub ridge_grid: Vec<f64>,
}

impl Default for MeanConfig {
    fn default() -> Self {
        MeanConfig {
            mode: MeanMode::Zero,
            ridge: None,
            ridge_grid: (0..7).map(|i| 10f64.powi(-i - 1)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub grid: CvGrid,
    pub folds: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            grid: CvGrid::default(),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub setting: u8,
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub reps: usize,
    pub protocol: ProtocolKind,
    pub aise_grid: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            setting: 1,
            n: 100,
            m: 10,
            sigma: 0.1,
            reps: 20,
            protocol: ProtocolKind::Cv,
            aise_grid: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenConfig {
    pub container: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    /// Points per axis of the eigenfunction export grid.
    pub grid: usize,
    /// Points of the marginal-basis export.
    pub marginal_points: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            container: None,
            sidecar: None,
            grid: 21,
            marginal_points: 101,
        }
    }
}

/// Everything a run depends on. Persisted as `run_config.json` next to the
/// outputs with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub kernel: KernelSpec,
    pub grams: GramOptions,
    pub fit: FitConfig,
    pub mean: MeanConfig,
    pub cv: CvConfig,
    pub sim: SimConfig,
    pub eigen: EigenConfig,
    pub seed: u64,
    /// Worker threads; `0` lets the runtime decide.
    pub threads: usize,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.fit.validate()?;
        match self.command {
            Command::Fit | Command::Cv | Command::Eigen if self.input.is_none() => {
                Err(invalid("an input dataset is required"))
            }
            Command::Cv if self.cv.grid.lambdas.is_empty() || self.cv.grid.betas.is_empty() => {
                Err(invalid("CV grids must be nonempty"))
            }
            _ => Ok(()),
        }
    }

    fn persist(&self) -> Result<()> {
        std::fs::create_dir_all(&self.output)?;
        std::fs::write(
            self.output.join("run_config.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    fn load_input(&self) -> Result<FunctionalDataset> {
        let path = self.input.as_ref().ok_or_else(|| invalid("an input dataset is required"))?;
        let loaded = load_csv(path)?;
        for w in &loaded.warnings {
            log::warn!("{w}");
        }
        Ok(loaded.data)
    }
}

/// Result of a subcommand that determines the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// The fit stopped at `max_iters`; outputs were still written.
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Done => 0,
            Outcome::NotConverged => 2,
        }
    }
}

pub fn run(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    match config.command {
        Command::Fit => cmd_fit(config),
        Command::Simulate => cmd_simulate(config),
        Command::Eigen => cmd_eigen(config),
        Command::Cv => cmd_cv(config),
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Centers `data` by the mean the configuration asks for.
pub fn centered(config: &RunConfig, data: &FunctionalDataset) -> Result<crate::dataset::CrossProducts> {
    let ridge = match (config.mean.mode, config.mean.ridge) {
        (MeanMode::Zero, _) => 0.0,
        (MeanMode::KernelRidge, Some(r)) => r,
        (MeanMode::KernelRidge, None) => {
            let folds = make_folds(data.n(), config.cv.folds.min(data.n()), config.seed)?;
            select_ridge(data, &config.kernel, &config.mean.ridge_grid, &folds)?
        }
    };
    let mean = fit_mean(data, &config.kernel, ridge, config.mean.mode)?;
    Ok(cross_products(data, &mean))
}

pub fn cmd_fit(config: &RunConfig) -> Result<Outcome> {
    let data = config.load_input()?;
    let cross = centered(config, &data)?;
    let grams = Arc::new(GramSet::build(&data, &config.kernel, &config.grams)?);
    let pre = precompute(&data, &cross, grams)?;
    let (fit, _) = Solver::new(&pre)?.fit(&config.fit, None)?;
    config.persist()?;
    let out = &config.output;
    save_fit(&fit, &out.join("coeffs.mcov"), &out.join("coeffs.json"))?;
    write_json(out, "diagnostics.json", &fit.diagnostics)?;
    write_json(out, "ranks.json", &rank_report(&fit.coeffs, config.fit.rank_threshold)?)?;
    if fit.diagnostics.converged {
        Ok(Outcome::Done)
    } else {
        log::warn!(
            "stopped after {} iterations without meeting the tolerance",
            fit.diagnostics.iterations
        );
        Ok(Outcome::NotConverged)
    }
}

pub fn cmd_cv(config: &RunConfig) -> Result<Outcome> {
    let data = config.load_input()?;
    let cross = centered(config, &data)?;
    let folds = make_folds(data.n(), config.cv.folds, config.seed)?;
    let result = cv_select(
        &data,
        &cross,
        &config.kernel,
        &config.grams,
        &config.cv.grid,
        &folds,
        &config.fit,
    )?;
    config.persist()?;
    let out = &config.output;
    let mut table = String::from("lambda,beta,mean_loss,all_converged\n");
    for s in &result.scores {
        table.push_str(&format!("{:?},{:?},{:?},{}\n", s.lambda, s.beta, s.mean_loss, s.all_converged));
    }
    std::fs::write(out.join("cv_scores.csv"), table)?;
    write_json(out, "cv_result.json", &result)?;
    let selected = RunConfig {
        command: Command::Fit,
        fit: result.best.clone(),
        ..config.clone()
    };
    write_json(out, "selected_config.json", &selected)?;
    Ok(Outcome::Done)
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Outcome> {
    let s = &config.sim;
    let setting = SimSetting::new(s.setting, s.n, s.m, s.sigma, config.seed)?;
    let protocol = match s.protocol {
        ProtocolKind::Cv => FitProtocol::Cv {
            grid: config.cv.grid.clone(),
            folds: config.cv.folds,
            base: config.fit.clone(),
        },
        ProtocolKind::Fixed => FitProtocol::Fixed {
            config: config.fit.clone(),
        },
    };
    let options = BenchmarkOptions {
        kernel: config.kernel.clone(),
        grams: config.grams.clone(),
        protocol,
        aise_grid: s.aise_grid,
    };
    let result = run_benchmark(&setting, s.reps, &options)?;
    config.persist()?;
    result.save(
        &config.output.join("sim_result.json"),
        &config.output.join("sim_result.csv"),
    )?;
    Ok(Outcome::Done)
}

pub fn cmd_eigen(config: &RunConfig) -> Result<Outcome> {
    let data = config.load_input()?;
    let container = config
        .eigen
        .container
        .clone()
        .ok_or_else(|| invalid("eigen needs a coefficient container"))?;
    let sidecar = config
        .eigen
        .sidecar
        .clone()
        .unwrap_or_else(|| container.with_extension("json"));
    let fit = load_fit(&container, &sidecar, &data)?;
    let eig = l2_eigensystem(&fit)?;
    config.persist()?;
    let out = &config.output;
    write_json(out, "eigen.json", &eig.summary())?;
    let grid = regular_grid(data.p, config.eigen.grid);
    std::fs::write(out.join("eigenfunctions.csv"), eigenfunctions_csv(&eig, &grid)?)?;
    for k in 0..data.p {
        let basis = marginal_basis(&fit, k)?;
        std::fs::write(
            out.join(format!("marginal_{}.csv", k + 1)),
            marginal_csv(&basis, config.eigen.marginal_points)?,
        )?;
    }
    Ok(Outcome::Done)
}
