use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::admm::{FitConfig, FitState, Solver};
use super::precompute::{precompute, GramSet, PairLoss};
use crate::dataset::{CrossProducts, FoldAssignment, FunctionalDataset};
use crate::error::{invalid, Error, Result};
use crate::kernel::{GramOptions, KernelSpec};
use crate::tensor::square_unfold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for CvGrid {
    /// `lambda` at every decade from 1e-7 to 1 and five `beta` in [0, 1].
    fn default() -> Self {
        CvGrid {
            lambdas: vec![1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            betas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub lambda: f64,
    pub beta: f64,
    pub mean_loss: f64,
    pub fold_losses: Vec<f64>,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: FitConfig,
    pub best_index: usize,
    pub scores: Vec<CvScore>,
}

/// Grid search over `(lambda, beta)` scored by held-out pair loss.
///
/// Each fold rebuilds the Gram factors from its training subjects; the
/// validation subjects are scored with the fitted surface evaluated at their
/// own locations. Ties go to larger `lambda`, then larger `beta`.
pub fn cv_select(
    data: &FunctionalDataset,
    cross: &CrossProducts,
    spec: &KernelSpec,
    options: &GramOptions,
    grid: &CvGrid,
    folds: &FoldAssignment,
    base: &FitConfig,
) -> Result<CvResult> {
    if grid.lambdas.is_empty() || grid.betas.is_empty() {
        return Err(invalid("CV grids must be nonempty"));
    }
    if folds.fold_of.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "fold map covers {} subjects, dataset has {}",
            folds.fold_of.len(),
            data.n()
        )));
    }
    let cells: Vec<(f64, f64)> = grid
        .lambdas
        .iter()
        .flat_map(|&l| grid.betas.iter().map(move |&b| (l, b)))
        .collect();
    let configs: Vec<FitConfig> = cells
        .iter()
        .map(|&(lambda, beta)| {
            let c = FitConfig {
                lambda,
                beta,
                ..base.clone()
            };
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;

    let mut lambda_order: Vec<usize> = (0..grid.lambdas.len()).collect();
    lambda_order.sort_by(|&a, &b| grid.lambdas[b].total_cmp(&grid.lambdas[a]));

    let per_fold: Vec<Vec<(f64, bool)>> = (0..folds.folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<(f64, bool)>> {
            let train_idx = folds.training(f);
            let val_idx = folds.validation(f);
            let train = data.subset(&train_idx);
            let val = data.subset(&val_idx);
            let grams = Arc::new(GramSet::build(&train, spec, options)?);
            let pre = precompute(&train, &cross.subset(&train_idx), grams.clone())?;
            let held_out = PairLoss::new(grams.feature_rows(&val)?, &cross.subset(&val_idx))?;
            let mut solver = Solver::new(&pre)?;
            solver.prepare(&configs[0])?;
            // one warm-started path per beta, from the largest lambda down
            let paths: Vec<Vec<(usize, f64, bool)>> = (0..grid.betas.len())
                .into_par_iter()
                .map(|j| -> Result<Vec<(usize, f64, bool)>> {
                    let mut s = solver.clone();
                    let mut state: Option<FitState> = None;
                    let mut out = Vec::with_capacity(lambda_order.len());
                    for (pos, &i) in lambda_order.iter().enumerate() {
                        let c = i * grid.betas.len() + j;
                        if pos > 0 && grid.lambdas[lambda_order[pos - 1]] == grid.lambdas[i] {
                            let (_, loss, ok) = out[pos - 1];
                            out.push((c, loss, ok));
                            continue;
                        }
                        let (fit, mut next) = s.fit(&configs[c], state.as_ref())?;
                        next.alpha = 1.0;
                        state = Some(next);
                        let sq = square_unfold(&fit.coeffs)?;
                        out.push((c, held_out.eval(&sq), fit.diagnostics.converged));
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            let mut row = vec![(0.0, false); configs.len()];
            for (c, loss, ok) in paths.into_iter().flatten() {
                row[c] = (loss, ok);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let scores: Vec<CvScore> = cells
        .iter()
        .enumerate()
        .map(|(c, &(lambda, beta))| {
            let fold_losses: Vec<f64> = per_fold.iter().map(|v| v[c].0).collect();
            CvScore {
                lambda,
                beta,
                mean_loss: fold_losses.iter().sum::<f64>() / fold_losses.len() as f64,
                all_converged: per_fold.iter().all(|v| v[c].1),
                fold_losses,
            }
        })
        .collect();
    let mut best_index = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best_index];
        let better = s.mean_loss < b.mean_loss
            || (s.mean_loss == b.mean_loss
                && (s.lambda > b.lambda || (s.lambda == b.lambda && s.beta > b.beta)));
        if better {
            best_index = i;
        }
    }
    Ok(CvResult {
        best: configs[best_index].clone(),
        best_index,
        scores,
    })
}
