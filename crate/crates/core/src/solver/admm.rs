use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::precompute::{precompute, GramSet, Precomputed, SolveOperator};
use super::prox::{nuclear, shrink_eigen, sym_eigenvalues, UnfoldMaps};
use crate::dataset::{CrossProducts, FunctionalDataset};
use crate::error::{invalid, Error, Result};
use crate::tensor::{square_fold, square_unfold, DenseTensor};

const RESTART_FACTOR: f64 = 0.999;

/// How `FitConfig::eta` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EtaScaling {
    /// `eta` multiplies the mean eigenvalue of `G`, so the default is
    /// insensitive to the kernel's overall scale.
    #[default]
    Relative,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda: f64,
    pub beta: f64,
    pub eta: f64,
    pub eta_scaling: EtaScaling,
    pub max_iters: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
    /// Also require `max_k ||B - D_k||_F <= primal_tol ||B||_F` before
    /// stopping; `0` disables the check.
    pub primal_tol: f64,
    pub rank_threshold: f64,
    pub accelerate: bool,
    /// Drop the momentum whenever the combined primal-dual residual fails
    /// to shrink.
    pub restart: bool,
    /// Residual balancing of `eta`; refactors the solve operator on change.
    pub adaptive_eta: bool,
    /// Solve with the PSD block only. Only valid with `beta = 1`.
    pub disable_one_way: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 1e-3,
            beta: 0.5,
            eta: 10.0,
            eta_scaling: EtaScaling::Relative,
            max_iters: 500,
            tol: 1e-6,
            primal_tol: 1e-4,
            rank_threshold: 1e-4,
            accelerate: true,
            restart: true,
            adaptive_eta: false,
            disable_one_way: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        if !(self.primal_tol >= 0.0) {
            return Err(invalid("primal_tol must be nonnegative"));
        }
        if !(self.rank_threshold >= 0.0) {
            return Err(invalid("rank_threshold must be nonnegative"));
        }
        if self.disable_one_way && self.beta != 1.0 {
            return Err(invalid("one-way blocks can only be disabled when beta = 1"));
        }
        Ok(())
    }

    fn blocks(&self, p: usize) -> usize {
        if self.disable_one_way {
            1
        } else {
            p + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// `||B - D_k||_F` for the PSD block and then each one-way block.
    pub primal_residuals: Vec<f64>,
    pub relative_primal_residual: f64,
    pub restarts: usize,
    pub eta: f64,
    pub objective_trace: Vec<f64>,
}

/// Fitted coefficient tensor together with everything needed to evaluate it.
#[derive(Debug, Clone)]
pub struct CovarianceFit {
    pub coeffs: DenseTensor,
    pub config: FitConfig,
    pub grams: Arc<GramSet>,
    pub diagnostics: FitDiagnostics,
}

/// Full iterate, usable to resume a fit.
#[derive(Debug, Clone)]
pub struct FitState {
    pub b: DenseTensor,
    /// PSD block first, then the one-way blocks.
    pub d: Vec<DenseTensor>,
    pub v: Vec<DenseTensor>,
    pub alpha: f64,
    pub iteration: usize,
}

/// Penalized objective at `b`; `+inf` outside the PSD cone.
pub fn objective(b: &DenseTensor, pre: &Precomputed, config: &FitConfig) -> Result<f64> {
    if b.shape() != &pre.coeff_shape() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have shape {:?}, expected {:?}",
            b.dims(),
            pre.coeff_shape().dims()
        )));
    }
    let sq = square_unfold(b)?;
    let maps = UnfoldMaps::new(b.shape())?;
    Ok(objective_sq(&sq, pre, &maps, config, None))
}

fn is_psd(sq: &DMatrix<f64>) -> bool {
    let scale = sq.abs().max();
    if scale == 0.0 {
        return true;
    }
    if (sq - sq.transpose()).abs().max() > 1e-10 * scale {
        return false;
    }
    let ev = sym_eigenvalues(sq);
    let top = ev.max().max(0.0);
    ev.min() >= -1e-8 * top
}

/// `trace` is the sum of eigenvalues when `sq` is known PSD by construction.
fn objective_sq(
    sq: &DMatrix<f64>,
    pre: &Precomputed,
    maps: &UnfoldMaps,
    config: &FitConfig,
    trace: Option<f64>,
) -> f64 {
    let trace = match trace {
        Some(t) => t,
        None => {
            if !is_psd(sq) {
                return f64::INFINITY;
            }
            sq.trace()
        }
    };
    let loss = pre.loss.eval(sq);
    let lambda = config.lambda;
    if lambda == 0.0 {
        return loss;
    }
    let mut pen = config.beta * trace;
    if config.beta < 1.0 {
        let p = pre.p as f64;
        let one_way: f64 = (0..pre.p).map(|k| maps.nuclear_norm(sq, k)).sum();
        pen += (1.0 - config.beta) / p * one_way;
    }
    loss + lambda * pen
}

/// Builds the precomputation and runs the solver.
pub fn admm_fit(
    data: &FunctionalDataset,
    cross: &CrossProducts,
    grams: Arc<GramSet>,
    config: &FitConfig,
    initial: Option<&FitState>,
) -> Result<CovarianceFit> {
    config.validate()?;
    let pre = precompute(data, cross, grams)?;
    Ok(fit_precomputed(&pre, config, initial)?.0)
}

/// Reusable solver bound to one precomputation; caches the solve operator.
/// Clones share the cached operator.
#[derive(Clone)]
pub struct Solver<'a> {
    pre: &'a Precomputed,
    maps: UnfoldMaps,
    op: Option<(usize, Arc<SolveOperator>)>,
}

impl<'a> Solver<'a> {
    pub fn new(pre: &'a Precomputed) -> Result<Self> {
        Ok(Solver {
            pre,
            maps: UnfoldMaps::new(&pre.coeff_shape())?,
            op: None,
        })
    }

    fn operator(&mut self, eta: f64, blocks: usize) -> Result<Arc<SolveOperator>> {
        let fresh = match &self.op {
            Some((b, op)) => *b != blocks || op.eta != eta,
            None => true,
        };
        if fresh {
            self.op = Some((blocks, Arc::new(self.pre.solve_operator(eta, blocks)?)));
        }
        Ok(self.op.as_ref().expect("just set").1.clone())
    }

    /// Augmented-Lagrangian weight actually used for `config`.
    pub fn effective_eta(&self, config: &FitConfig) -> f64 {
        match config.eta_scaling {
            EtaScaling::Absolute => config.eta,
            EtaScaling::Relative => config.eta * self.pre.g_scale,
        }
    }

    /// Factors the solve operator for `config` ahead of time.
    pub fn prepare(&mut self, config: &FitConfig) -> Result<()> {
        config.validate()?;
        let eta = self.effective_eta(config);
        self.operator(eta, config.blocks(self.pre.p)).map(|_| ())
    }

    pub fn fit(
        &mut self,
        config: &FitConfig,
        initial: Option<&FitState>,
    ) -> Result<(CovarianceFit, FitState)> {
        config.validate()?;
        let pre = self.pre;
        let p = pre.p;
        let q = pre.core;
        let blocks = config.blocks(p);
        let shape = pre.coeff_shape();
        let to_sq = |t: &DenseTensor| -> Result<DMatrix<f64>> {
            if t.shape() != &shape {
                return Err(Error::DimensionMismatch("initial state has the wrong shape".into()));
            }
            square_unfold(t)
        };

        let (mut b, mut d, mut v, mut alpha, start) = match initial {
            Some(s) => {
                if s.d.len() != blocks || s.v.len() != blocks {
                    return Err(invalid(format!(
                        "initial state has {} blocks, expected {blocks}",
                        s.d.len()
                    )));
                }
                (
                    to_sq(&s.b)?,
                    s.d.iter().map(to_sq).collect::<Result<Vec<_>>>()?,
                    s.v.iter().map(to_sq).collect::<Result<Vec<_>>>()?,
                    s.alpha,
                    s.iteration,
                )
            }
            None => (
                DMatrix::zeros(q, q),
                vec![DMatrix::zeros(q, q); blocks],
                vec![DMatrix::zeros(q, q); blocks],
                1.0,
                0,
            ),
        };
        let mut d_hat = d.clone();
        let mut v_hat = v.clone();

        let h_mat = pre.h_matrix();
        let lam = config.lambda;
        if zero_is_optimal(&h_mat, &self.maps, config, p) {
            let zero = DenseTensor::zeros(shape.clone());
            let obj = pre.c0;
            let fit = CovarianceFit {
                coeffs: zero.clone(),
                config: config.clone(),
                grams: pre.grams.clone(),
                diagnostics: FitDiagnostics {
                    iterations: 0,
                    converged: true,
                    final_objective: obj,
                    primal_residuals: vec![0.0; blocks],
                    relative_primal_residual: 0.0,
                    restarts: 0,
                    eta: self.effective_eta(config),
                    objective_trace: vec![obj],
                },
            };
            let state = FitState {
                b: zero.clone(),
                d: vec![zero.clone(); blocks],
                v: vec![zero; blocks],
                alpha: 1.0,
                iteration: start,
            };
            return Ok((fit, state));
        }
        let mut eta = self.effective_eta(config);
        let mut trace = Vec::with_capacity(config.max_iters.min(4096));
        let mut prev = objective_sq(&d[0], pre, &self.maps, config, None);
        if !prev.is_finite() {
            prev = f64::INFINITY;
        }
        let mut converged = false;
        let mut restarts = 0;
        let mut iterations = 0;
        let mut first_norm = 0.0;
        let mut prev_combined = f64::INFINITY;

        for _ in 0..config.max_iters {
            iterations += 1;
            // B-update on the symmetric subspace
            let mut rhs = h_mat.clone();
            for k in 0..blocks {
                rhs += (&d_hat[k] - &v_hat[k]) * eta;
            }
            let op = self.operator(eta, blocks)?;
            let u = &op.inverse * pre.sym.project(&rhs);
            let b_new = pre.sym.lift(&u);

            let mut d_new = Vec::with_capacity(blocks);
            let mut v_new = Vec::with_capacity(blocks);
            let x0 = &b_new + &v_hat[0];
            let (d0, kept) = shrink_eigen(&x0, lam * config.beta / eta);
            v_new.push(x0 - &d0);
            d_new.push(d0);
            for k in 1..blocks {
                let x = &b_new + &v_hat[k];
                let thr = lam * (1.0 - config.beta) / (p as f64 * eta);
                let dk = self.maps.prox_one_way(&x, k - 1, thr);
                v_new.push(x - &dk);
                d_new.push(dk);
            }

            let obj = objective_sq(&d_new[0], pre, &self.maps, config, Some(kept.iter().sum()));
            if !obj.is_finite() {
                trace.push(obj);
                return Err(Error::Diverged {
                    iteration: start + iterations,
                    trace,
                });
            }
            trace.push(obj);

            // combined residual against the extrapolated point
            let combined: f64 = (0..blocks)
                .map(|k| (&d_new[k] - &d_hat[k]).norm_squared() + (&v_new[k] - &v_hat[k]).norm_squared())
                .sum::<f64>()
                * eta;
            let stalled = combined > RESTART_FACTOR * prev_combined;
            prev_combined = if stalled {
                prev_combined / RESTART_FACTOR
            } else {
                combined
            };
            if config.accelerate && !(config.restart && stalled) {
                let alpha_new = 0.5 * (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt());
                let gamma = (alpha - 1.0) / alpha_new;
                for k in 0..blocks {
                    d_hat[k] = &d_new[k] + (&d_new[k] - &d[k]) * gamma;
                    v_hat[k] = &v_new[k] + (&v_new[k] - &v[k]) * gamma;
                }
                alpha = alpha_new;
            } else {
                if config.accelerate {
                    restarts += 1;
                }
                alpha = 1.0;
                d_hat.clone_from(&d_new);
                v_hat.clone_from(&v_new);
            }

            if config.adaptive_eta {
                let r: f64 = d_new.iter().map(|dk| (&b_new - dk).norm_squared()).sum::<f64>().sqrt();
                let s: f64 = eta
                    * d_new
                        .iter()
                        .zip(&d)
                        .map(|(a, o)| (a - o).norm_squared())
                        .sum::<f64>()
                        .sqrt();
                let factor = if r > 10.0 * s {
                    2.0
                } else if s > 10.0 * r {
                    0.5
                } else {
                    1.0
                };
                if factor != 1.0 {
                    eta *= factor;
                    for k in 0..blocks {
                        v_new[k] /= factor;
                    }
                    v_hat.clone_from(&v_new);
                    d_hat.clone_from(&d_new);
                    alpha = 1.0;
                    prev_combined = f64::INFINITY;
                }
            }

            b = b_new;
            d = d_new;
            v = v_new;
            let change = (obj - prev).abs();
            let scale = prev.abs().max(f64::MIN_POSITIVE);
            prev = obj;
            if iterations == 1 {
                first_norm = b.norm();
            }
            if change <= config.tol * scale && primal_ok(&b, &d, config.primal_tol, first_norm) {
                converged = true;
                break;
            }
        }

        let primal: Vec<f64> = d.iter().map(|dk| (&b - dk).norm()).collect();
        let bn = b.norm();
        let rel = if bn > 0.0 {
            primal.iter().cloned().fold(0.0, f64::max) / bn
        } else {
            0.0
        };
        let final_objective = *trace.last().unwrap_or(&prev);
        let coeffs = square_fold(&d[0], &shape)?;
        let state = FitState {
            b: square_fold(&b, &shape)?,
            d: d.iter().map(|m| square_fold(m, &shape)).collect::<Result<_>>()?,
            v: v.iter().map(|m| square_fold(m, &shape)).collect::<Result<_>>()?,
            alpha,
            iteration: start + iterations,
        };
        let fit = CovarianceFit {
            coeffs,
            config: config.clone(),
            grams: pre.grams.clone(),
            diagnostics: FitDiagnostics {
                iterations,
                converged,
                final_objective,
                primal_residuals: primal,
                relative_primal_residual: rel,
                restarts,
                eta,
                objective_trace: trace,
            },
        };
        Ok((fit, state))
    }
}

/// Sufficient condition for `B = 0` to be a minimizer: the loss gradient
/// `-H` at zero splits into subgradients of the PSD trace term and the
/// one-way nuclear terms, with the split taken along `H` itself.
fn zero_is_optimal(h: &DMatrix<f64>, maps: &UnfoldMaps, config: &FitConfig, p: usize) -> bool {
    let lam = config.lambda;
    let top = sym_eigenvalues(h).max();
    let psd_cap = lam * config.beta;
    if top <= psd_cap {
        return true;
    }
    let theta = psd_cap / top;
    let one_way_cap = lam * (1.0 - config.beta) / p as f64;
    (0..p).all(|k| {
        let norm = maps.one_way(h, k).singular_values().max();
        (1.0 - theta) * norm <= one_way_cap
    })
}

/// `scale` floors the bound so iterates shrinking to zero can still stop.
fn primal_ok(b: &DMatrix<f64>, d: &[DMatrix<f64>], tol: f64, scale: f64) -> bool {
    if tol == 0.0 {
        return true;
    }
    let bound = tol * b.norm().max(scale);
    d.iter().all(|dk| (b - dk).norm() <= bound)
}

pub fn fit_precomputed(
    pre: &Precomputed,
    config: &FitConfig,
    initial: Option<&FitState>,
) -> Result<(CovarianceFit, FitState)> {
    Solver::new(pre)?.fit(config, initial)
}

/// Nuclear norm of a one-way unfolding, exposed for oracles.
pub fn one_way_nuclear(b: &DenseTensor, k: usize) -> Result<f64> {
    Ok(nuclear(&crate::tensor::one_way_unfold(b, k)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{cross_products, MeanEstimate, Subject};
    use crate::kernel::{GramOptions, KernelSpec};
    use nalgebra::DVector;

    fn small() -> (FunctionalDataset, CrossProducts) {
        let subjects = (0..5)
            .map(|i| {
                let locations: Vec<f64> = (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).fract()).collect();
                let values = (0..4).map(|j| ((i + j) as f64).sin()).collect();
                Subject { id: format!("s{i}"), locations, values }
            })
            .collect();
        let data = FunctionalDataset::new(2, subjects).unwrap();
        let cross = cross_products(&data, &MeanEstimate::Zero);
        (data, cross)
    }

    #[test]
    fn b_update_is_stationary() {
        let (data, cross) = small();
        let options = GramOptions { rank_cap: 2, max_core_size: 4, ..GramOptions::default() };
        let grams = Arc::new(GramSet::build(&data, &KernelSpec::default(), &options).unwrap());
        let pre = precompute(&data, &cross, grams).unwrap();
        let q = pre.core;
        let eta = 0.3 * pre.g_scale;
        let blocks = 3;
        let op = pre.solve_operator(eta, blocks).unwrap();
        let rhs = DMatrix::from_fn(q, q, |a, b| ((3 * a + 5 * b) as f64).cos() * pre.g_scale);
        let b = pre.sym.lift(&(&op.inverse * pre.sym.project(&rhs)));
        assert!((&b - b.transpose()).abs().max() == 0.0);
        let gb = DMatrix::from_column_slice(q, q, (&pre.g * DVector::from_column_slice(b.as_slice())).as_slice());
        let lhs = (&gb + gb.transpose()) + &b * (blocks as f64 * eta);
        let want = (&rhs + rhs.transpose()) * 0.5;
        assert!((lhs - &want).norm() <= 1e-8 * want.norm());
    }

    #[test]
    fn huge_penalty_short_circuits_to_zero() {
        let (data, cross) = small();
        let grams = Arc::new(GramSet::build(&data, &KernelSpec::default(), &GramOptions::default()).unwrap());
        let pre = precompute(&data, &cross, grams).unwrap();
        let mut s = Solver::new(&pre).unwrap();
        let cfg = FitConfig { lambda: 1e6, ..FitConfig::default() };
        let (fit, _) = s.fit(&cfg, None).unwrap();
        assert_eq!(fit.diagnostics.iterations, 0);
        assert_eq!(fit.coeffs.frobenius_norm(), 0.0);
        assert!(!zero_is_optimal(&pre.h_matrix(), &s.maps, &FitConfig { lambda: 0.0, ..cfg }, 2));
    }
}
