//! Simulated two-dimensional functional data with a known covariance, and the
//! integrated-squared-error benchmark built on it.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{cross_products, make_folds, FunctionalDataset, MeanEstimate, Subject};
use crate::error::{invalid, Result};
use crate::kernel::{GramOptions, KernelSpec};
use crate::quadrature::simpson;
use crate::solver::{
    cv_select, precompute, rank_report, CovarianceFit, CvGrid, FitConfig, GramSet, Solver,
};
use crate::tensor::square_unfold;

const SETTING_1: [(usize, usize); 6] = [(1, 1), (1, 2), (2, 1), (3, 1), (2, 2), (3, 2)];
const SETTING_2: [(usize, usize); 6] = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 3), (4, 4)];
const SETTING_3: [(usize, usize); 4] = [(1, 2), (2, 1), (3, 3), (4, 4)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub id: u8,
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SimSetting {
    pub fn new(id: u8, n: usize, m: usize, sigma: f64, seed: u64) -> Result<Self> {
        let s = SimSetting { id, n, m, sigma, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.id) {
            return Err(invalid(format!("unknown simulation setting {}", self.id)));
        }
        if self.n == 0 || self.m == 0 {
            return Err(invalid("n and m must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma must be finite and nonnegative"));
        }
        Ok(())
    }

    /// One-based `(i, j)` cosine indices of each component, in component order.
    pub fn components(&self) -> &'static [(usize, usize)] {
        match self.id {
            1 => &SETTING_1,
            2 => &SETTING_2,
            _ => &SETTING_3,
        }
    }

    /// `1 / k^2` for component `k = 1..R`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.components().len()).map(|k| 1.0 / (k * k) as f64).collect()
    }

    /// Component values `psi_k(t) = e_i(t_1) e_j(t_2)` with `e_i = sqrt2 cos(i pi t)`.
    pub fn psi(&self, t: &[f64]) -> Vec<f64> {
        self.components()
            .iter()
            .map(|&(i, j)| cosine(i, t[0]) * cosine(j, t[1]))
            .collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimSetting { seed, ..self.clone() }
    }
}

fn cosine(k: usize, t: f64) -> f64 {
    std::f64::consts::SQRT_2 * (k as f64 * std::f64::consts::PI * t).cos()
}

fn check_point(x: &[f64]) -> Result<()> {
    if x.len() != 2 || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid(format!("expected a point of [0,1]^2, got {x:?}")));
    }
    Ok(())
}

pub fn true_covariance(setting: &SimSetting, s: &[f64], t: &[f64]) -> Result<f64> {
    setting.validate()?;
    check_point(s)?;
    check_point(t)?;
    let (a, b) = (setting.psi(s), setting.psi(t));
    Ok(setting
        .eigenvalues()
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(l, (x, y))| l * x * y)
        .sum())
}

/// Draws one dataset from a `ChaCha8Rng` seeded with `setting.seed`.
///
/// Per subject, in order: the `R` component scores, then for each observation
/// the two location coordinates followed by the noise draw.
pub fn generate(setting: &SimSetting) -> Result<FunctionalDataset> {
    setting.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(setting.seed);
    let sd: Vec<f64> = setting.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let subjects = (0..setting.n)
        .map(|i| {
            let scores: Vec<f64> = sd
                .iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut locations = Vec::with_capacity(2 * setting.m);
            let mut values = Vec::with_capacity(setting.m);
            for _ in 0..setting.m {
                let t = [rng.random::<f64>(), rng.random::<f64>()];
                let x: f64 = setting.psi(&t).iter().zip(&scores).map(|(p, z)| p * z).sum();
                let e: f64 = rng.sample(StandardNormal);
                locations.extend_from_slice(&t);
                values.push(x + setting.sigma * e);
            }
            Subject {
                id: format!("s{i}"),
                locations,
                values,
            }
        })
        .collect();
    FunctionalDataset::new(2, subjects)
}

/// `(rep + 1)`-th output of SplitMix64 started at `master`.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(rep + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Composite-Simpson tensor quadrature of `(fitted - true)^2` over `[0,1]^4`.
///
/// The integrand separates through a tabulated feature matrix on the 2-D grid,
/// so the cost is a pair of `g^2 x g^2` products.
pub fn aise(fit: &CovarianceFit, setting: &SimSetting, grid_per_axis: usize) -> Result<f64> {
    if grid_per_axis < 5 {
        return Err(invalid("grid_per_axis must be at least 5"));
    }
    setting.validate()?;
    if fit.grams.p() != 2 {
        return Err(invalid("the benchmark surface is two-dimensional"));
    }
    let g = if grid_per_axis.is_multiple_of(2) { grid_per_axis + 1 } else { grid_per_axis };
    let (nodes, weights) = simpson(g)?;
    let pts: Vec<[f64; 2]> = nodes.iter().flat_map(|&a| nodes.iter().map(move |&b| [a, b])).collect();
    let w: Vec<f64> = weights.iter().flat_map(|&a| weights.iter().map(move |&b| a * b)).collect();
    let q = fit.grams.core_size();
    let mut phi = DMatrix::zeros(pts.len(), q);
    for (r, x) in pts.iter().enumerate() {
        phi.row_mut(r).copy_from(&fit.grams.feature(x)?.transpose());
    }
    let r = setting.components().len();
    let lam = setting.eigenvalues();
    let psi = DMatrix::from_fn(pts.len(), r, |a, k| setting.psi(&pts[a])[k] * lam[k].sqrt());
    let b = square_unfold(&fit.coeffs)?;
    let diff = &phi * b * phi.transpose() - &psi * psi.transpose();
    let mut total = 0.0;
    for c in 0..pts.len() {
        let mut col = 0.0;
        for a in 0..pts.len() {
            let x = diff[(a, c)];
            col += w[a] * x * x;
        }
        total += w[c] * col;
    }
    Ok(total)
}

/// Same Simpson rule as [`aise`] applied node by node to an arbitrary
/// estimate, without the separable shortcut.
pub fn integrated_squared_error<F>(setting: &SimSetting, grid_per_axis: usize, estimate: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    if grid_per_axis < 5 {
        return Err(invalid("grid_per_axis must be at least 5"));
    }
    setting.validate()?;
    let g = if grid_per_axis.is_multiple_of(2) { grid_per_axis + 1 } else { grid_per_axis };
    let (nodes, weights) = simpson(g)?;
    let pts: Vec<([f64; 2], f64)> = (0..g * g)
        .map(|i| ([nodes[i / g], nodes[i % g]], weights[i / g] * weights[i % g]))
        .collect();
    pts.par_iter()
        .map(|(s, ws)| {
            let mut acc = 0.0;
            for (t, wt) in &pts {
                let d = estimate(s, t)? - true_covariance(setting, s, t)?;
                acc += wt * d * d;
            }
            Ok(ws * acc)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitProtocol {
    Cv {
        grid: CvGrid,
        folds: usize,
        base: FitConfig,
    },
    Fixed {
        config: FitConfig,
    },
}

impl Default for FitProtocol {
    fn default() -> Self {
        FitProtocol::Cv {
            grid: CvGrid::default(),
            folds: 5,
            base: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub kernel: KernelSpec,
    pub grams: GramOptions,
    pub protocol: FitProtocol,
    pub aise_grid: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            kernel: KernelSpec::default(),
            grams: GramOptions::default(),
            protocol: FitProtocol::default(),
            aise_grid: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub aise: f64,
    pub two_way_rank: usize,
    pub one_way_ranks: Vec<usize>,
    pub lambda: f64,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub setting: SimSetting,
    pub reps: usize,
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<ReplicationFailure>,
    pub mean_aise: f64,
    pub se_aise: f64,
    pub mean_two_way_rank: f64,
    pub mean_one_way_ranks: Vec<f64>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One replication: simulate, select or fix the tuning parameters, refit on
/// the full data and score.
pub fn run_replication(
    setting: &SimSetting,
    rep: usize,
    options: &BenchmarkOptions,
) -> Result<(ReplicationRow, CovarianceFit)> {
    let seed = replication_seed(setting.seed, rep as u64);
    let s = setting.with_seed(seed);
    let data = generate(&s)?;
    let cross = cross_products(&data, &MeanEstimate::Zero);
    let config = match &options.protocol {
        FitProtocol::Fixed { config } => config.clone(),
        FitProtocol::Cv { grid, folds, base } => {
            let f = make_folds(data.n(), *folds, replication_seed(seed, 0))?;
            cv_select(&data, &cross, &options.kernel, &options.grams, grid, &f, base)?.best
        }
    };
    let grams = Arc::new(GramSet::build(&data, &options.kernel, &options.grams)?);
    let pre = precompute(&data, &cross, grams)?;
    let (fit, _) = Solver::new(&pre)?.fit(&config, None)?;
    let ranks = rank_report(&fit.coeffs, config.rank_threshold)?;
    let row = ReplicationRow {
        rep,
        seed,
        aise: aise(&fit, &s, options.aise_grid)?,
        two_way_rank: ranks.two_way,
        one_way_ranks: ranks.one_way,
        lambda: config.lambda,
        beta: config.beta,
        iterations: fit.diagnostics.iterations,
        converged: fit.diagnostics.converged,
    };
    Ok((row, fit))
}

pub fn run_benchmark(setting: &SimSetting, reps: usize, options: &BenchmarkOptions) -> Result<SimResult> {
    setting.validate()?;
    if reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    let outcomes: Vec<std::result::Result<ReplicationRow, ReplicationFailure>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            run_replication(setting, rep, options).map(|(row, _)| row).map_err(|e| {
                ReplicationFailure {
                    rep,
                    seed: replication_seed(setting.seed, rep as u64),
                    message: e.to_string(),
                }
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    let aises: Vec<f64> = rows.iter().map(|r| r.aise).collect();
    let (mean_aise, se_aise) = mean_se(&aises);
    let count = rows.len().max(1) as f64;
    let mean_two_way_rank = rows.iter().map(|r| r.two_way_rank as f64).sum::<f64>() / count;
    let mean_one_way_ranks = (0..2)
        .map(|k| rows.iter().map(|r| r.one_way_ranks[k] as f64).sum::<f64>() / count)
        .collect();
    Ok(SimResult {
        setting: setting.clone(),
        reps,
        rows,
        failures,
        mean_aise,
        se_aise,
        mean_two_way_rank,
        mean_one_way_ranks,
    })
}

impl SimResult {
    /// One table row: `setting,n,m,sigma,reps,aise,se,R,r1,r2,failures`.
    pub fn to_csv(&self) -> String {
        let s = &self.setting;
        format!(
            "setting,n,m,sigma,reps,aise,aise_se,rank,rank_1,rank_2,failures\n{},{},{},{},{},{:.6},{:.3e},{:.2},{:.2},{:.2},{}\n",
            s.id,
            s.n,
            s.m,
            s.sigma,
            self.reps,
            self.mean_aise,
            self.se_aise,
            self.mean_two_way_rank,
            self.mean_one_way_ranks[0],
            self.mean_one_way_ranks[1],
            self.failures.len()
        )
    }

    pub fn save(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_string_pretty(self)?)?;
        std::fs::write(csv, self.to_csv())?;
        Ok(())
    }
}
