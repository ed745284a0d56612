//! Pointwise evaluation of a fitted covariance and its `L2` spectral
//! decomposition.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::solver::{CovarianceFit, GramSet};
use crate::tensor::{
    kron_vectors, kronecker_chain, n_mode_product, one_way_unfold, square_fold, square_unfold,
    DenseTensor,
};

const PINV_FLOOR: f64 = 1e-12;

/// `Gamma(s, t)` by contracting the coefficient tensor against the projected
/// kernel sections, one mode at a time.
pub fn evaluate_cov(fit: &CovarianceFit, s: &[f64], t: &[f64]) -> Result<f64> {
    let g = &fit.grams;
    let p = g.p();
    if s.len() != p || t.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "points must have {p} coordinates"
        )));
    }
    let mut acc = fit.coeffs.clone();
    for (mode, (f, &x)) in g.factors.iter().chain(&g.factors).zip(s.iter().chain(t)).enumerate() {
        let v = f.project(x)?;
        acc = n_mode_product(&acc, &DMatrix::from_row_slice(1, v.len(), v.as_slice()), mode)?;
    }
    Ok(acc.data()[0])
}

/// `R_k = M_k^+ Q_k M_k^{+T}`, the `L2` Gram matrix of the factor-basis
/// functions of dimension `k`.
pub fn l2_gram(grams: &GramSet, k: usize) -> Result<DMatrix<f64>> {
    let f = grams
        .factors
        .get(k)
        .ok_or(Error::ModeOutOfRange { mode: k, order: grams.p() })?;
    let q = f.spec.kernel_cross_integral(&f.locations)?;
    let r = &f.pinv * q * f.pinv.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Symmetric square root and pseudo-inverse square root of a PSD matrix.
fn sqrt_pair(r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(r.clone());
    let top = eig.eigenvalues.max().max(0.0);
    if eig.eigenvalues.min() < -1e-8 * top {
        return Err(Error::NotPsd(format!(
            "L2 Gram matrix has eigenvalue {:e} against a top value of {top:e}",
            eig.eigenvalues.min()
        )));
    }
    let n = r.nrows();
    let mut root = DMatrix::zeros(n, n);
    let mut inv_root = DMatrix::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(i);
        let uu = u * u.transpose();
        if l > 0.0 {
            root += &uu * l.sqrt();
        }
        if l > PINV_FLOOR * top {
            inv_root += uu / l.sqrt();
        }
    }
    Ok((root, inv_root))
}

struct Transform {
    /// `R_k^{-1/2}` per dimension.
    inv_roots: Vec<DMatrix<f64>>,
    /// `(x) R^{1/2} B_square (x) R^{1/2}`.
    b_l: DMatrix<f64>,
}

fn transform(fit: &CovarianceFit) -> Result<Transform> {
    let p = fit.grams.p();
    let mut roots = Vec::with_capacity(p);
    let mut inv_roots = Vec::with_capacity(p);
    for k in 0..p {
        let (a, b) = sqrt_pair(&l2_gram(&fit.grams, k)?)?;
        roots.push(a);
        inv_roots.push(b);
    }
    let root = kronecker_chain(&roots.iter().collect::<Vec<_>>());
    let b = square_unfold(&fit.coeffs)?;
    let b_l = &root * b * root.transpose();
    Ok(Transform {
        inv_roots,
        b_l: (&b_l + b_l.transpose()) * 0.5,
    })
}

/// `L2` eigenvalues and eigenfunctions of a fitted covariance.
#[derive(Debug, Clone)]
pub struct L2EigenSystem {
    pub eigenvalues: Vec<f64>,
    /// Share of the retained spectrum carried by each component.
    pub fve: Vec<f64>,
    /// Running sum of `fve`.
    pub cumulative_fve: Vec<f64>,
    /// Eigenvectors `v_l` of the transformed square unfolding, one per column.
    pub vectors: DMatrix<f64>,
    /// `R_k^{-1/2}` per dimension.
    pub inv_roots: Vec<DMatrix<f64>>,
    pub grams: Arc<GramSet>,
}

/// Relative cutoff below which transformed eigenvalues count as zero.
pub const SPECTRUM_CUTOFF: f64 = 1e-10;

pub fn l2_eigensystem(fit: &CovarianceFit) -> Result<L2EigenSystem> {
    let tr = transform(fit)?;
    let eig = SymmetricEigen::new(tr.b_l);
    let top = eig.eigenvalues.max().max(0.0);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > SPECTRUM_CUTOFF * top)
        .collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    let (fve, cumulative_fve) = shares(&eigenvalues);
    Ok(L2EigenSystem {
        eigenvalues,
        fve,
        cumulative_fve,
        vectors,
        inv_roots: tr.inv_roots,
        grams: fit.grams.clone(),
    })
}

fn shares(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = values.iter().sum();
    let fve: Vec<f64> = values.iter().map(|v| v / total).collect();
    let cumulative = fve
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    (fve, cumulative)
}

impl L2EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `(x)_k R_k^{-1/2} M_k^+ z_k(x_k)`.
    pub fn whitened_features(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.grams.p() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, model has p={}",
                x.len(),
                self.grams.p()
            )));
        }
        let parts = self
            .grams
            .factors
            .iter()
            .zip(&self.inv_roots)
            .zip(x)
            .map(|((f, w), &s)| Ok(w * f.project(s)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(kron_vectors(&parts))
    }

    /// Values of every retained eigenfunction at `x`.
    pub fn eigenfunctions_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.vectors.tr_mul(&self.whitened_features(x)?))
    }

    pub fn eigenfunction(&self, l: usize, x: &[f64]) -> Result<f64> {
        if l >= self.len() {
            return Err(invalid(format!("component {l} not retained ({} available)", self.len())));
        }
        Ok(self.vectors.column(l).dot(&self.whitened_features(x)?))
    }

    /// Coefficients `u_l` of eigenfunction `l` over the pooled kernel
    /// sections: `f_l(x) = u_l^T [z_1(x_1) (x) .. (x) z_p(x_p)]`.
    pub fn section_coefficients(&self, l: usize) -> Result<DVector<f64>> {
        if l >= self.len() {
            return Err(invalid(format!("component {l} not retained")));
        }
        let maps: Vec<DMatrix<f64>> = self
            .grams
            .factors
            .iter()
            .zip(&self.inv_roots)
            .map(|(f, w)| w * &f.pinv)
            .collect();
        let dims: Vec<usize> = maps.iter().map(|m| m.nrows()).collect();
        let mut t = DenseTensor::from_vec(dims, self.vectors.column(l).iter().copied().collect())?;
        for (k, m) in maps.iter().enumerate() {
            t = n_mode_product(&t, &m.transpose(), k)?;
        }
        Ok(DVector::from_vec(t.into_data()))
    }

    /// `sum_l lambda_l f_l(x_a) f_l(x_b)` over all pairs of grid points.
    pub fn reconstruct_on_grid(&self, grid: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let rows: Vec<DVector<f64>> = grid
            .par_iter()
            .map(|x| self.eigenfunctions_at(x))
            .collect::<Result<_>>()?;
        let r = self.len();
        let f = DMatrix::from_fn(grid.len(), r, |a, l| rows[a][l]);
        let scaled = DMatrix::from_fn(grid.len(), r, |a, l| f[(a, l)] * self.eigenvalues[l]);
        Ok(scaled * f.transpose())
    }

    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            eigenvalues: self.eigenvalues.clone(),
            fve: self.fve.clone(),
            cumulative_fve: self.cumulative_fve.clone(),
        }
    }
}

pub fn reconstruct_on_grid(eig: &L2EigenSystem, grid: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    eig.reconstruct_on_grid(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub eigenvalues: Vec<f64>,
    pub fve: Vec<f64>,
    pub cumulative_fve: Vec<f64>,
}

/// Orthonormal marginal basis of one dimension.
#[derive(Debug, Clone)]
pub struct MarginalBasis {
    pub dimension: usize,
    pub singular_values: Vec<f64>,
    /// Left singular vectors of the transformed one-way unfolding.
    pub vectors: DMatrix<f64>,
    /// `R_k^{-1/2}`.
    pub inv_root: DMatrix<f64>,
    pub grams: Arc<GramSet>,
}

pub fn marginal_basis(fit: &CovarianceFit, k: usize) -> Result<MarginalBasis> {
    let p = fit.grams.p();
    if k >= p {
        return Err(Error::ModeOutOfRange { mode: k, order: p });
    }
    let tr = transform(fit)?;
    let b_l = square_fold(&tr.b_l, fit.coeffs.shape())?;
    let svd = one_way_unfold(&b_l, k)?.svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| top > 0.0 && svd.singular_values[i] > SPECTRUM_CUTOFF * top)
        .collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Ok(MarginalBasis {
        dimension: k,
        singular_values: order.iter().map(|&i| svd.singular_values[i]).collect(),
        vectors: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        inv_root: tr.inv_roots[k].clone(),
        grams: fit.grams.clone(),
    })
}

impl MarginalBasis {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    /// Every basis function at the scalar location `s`.
    pub fn values_at(&self, s: f64) -> Result<DVector<f64>> {
        let phi = &self.inv_root * self.grams.factors[self.dimension].project(s)?;
        Ok(self.vectors.tr_mul(&phi))
    }

    /// Coefficients over the pooled kernel sections of this dimension.
    pub fn section_coefficients(&self) -> DMatrix<f64> {
        (&self.inv_root * &self.grams.factors[self.dimension].pinv).tr_mul(&self.vectors)
    }
}

/// Tensor grid with `per_axis` equispaced points per axis, last axis fastest.
pub fn regular_grid(p: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if per_axis == 1 {
        vec![0.5]
    } else {
        (0..per_axis).map(|i| i as f64 / (per_axis - 1) as f64).collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 0..p {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

/// CSV of eigenfunction values: coordinate columns then one column per
/// component.
pub fn eigenfunctions_csv(eig: &L2EigenSystem, grid: &[Vec<f64>]) -> Result<String> {
    let p = eig.grams.p();
    let mut out = String::new();
    let header: Vec<String> = (1..=p)
        .map(|k| format!("t{k}"))
        .chain((1..=eig.len()).map(|l| format!("f{l}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for x in grid {
        let v = eig.eigenfunctions_at(x)?;
        let cells: Vec<String> = x.iter().chain(v.iter()).map(|c| format!("{c:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn marginal_csv(basis: &MarginalBasis, points: usize) -> Result<String> {
    let mut out = String::from("t");
    for l in 1..=basis.len() {
        let _ = write!(out, ",psi{l}");
    }
    out.push('\n');
    for x in regular_grid(1, points) {
        let v = basis.values_at(x[0])?;
        let _ = write!(out, "{:?}", x[0]);
        for c in v.iter() {
            let _ = write!(out, ",{c:?}");
        }
        out.push('\n');
    }
    Ok(out)
}
