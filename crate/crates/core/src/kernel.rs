//! Univariate cosine-series reproducing kernels and their Gram factors.
//!
//! The kernel is `K(s, t) = c_0 + sum_{k=1}^{T} (k pi)^{-r} e_k(s) e_k(t)` with
//! `e_k(t) = sqrt(2) cos(k pi t)`; the constant term `c_0` is optional.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub decay_exponent: f64,
    pub truncation_order: usize,
    pub include_constant: bool,
    pub constant_coefficient: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            decay_exponent: 4.0,
            truncation_order: 50,
            include_constant: false,
            constant_coefficient: 1.0,
        }
    }
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("coordinate {t} lies outside [0, 1]")));
    }
    Ok(())
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.truncation_order == 0 {
            return Err(invalid("kernel truncation order must be at least 1"));
        }
        if !(self.decay_exponent > 1.0) {
            return Err(invalid(format!(
                "kernel decay exponent must exceed 1, got {}",
                self.decay_exponent
            )));
        }
        if self.include_constant && !(self.constant_coefficient > 0.0) {
            return Err(invalid("constant-term coefficient must be positive"));
        }
        Ok(())
    }

    fn terms(&self) -> usize {
        self.truncation_order + usize::from(self.include_constant)
    }

    /// Series coefficients, constant term first when present.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.terms());
        if self.include_constant {
            c.push(self.constant_coefficient);
        }
        c.extend((1..=self.truncation_order).map(|k| (k as f64 * PI).powf(-self.decay_exponent)));
        c
    }

    /// L2-orthonormal basis functions evaluated at `t`, aligned with
    /// [`coefficients`](Self::coefficients).
    pub fn basis(&self, t: f64) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.terms());
        if self.include_constant {
            b.push(1.0);
        }
        b.extend((1..=self.truncation_order).map(|k| SQRT_2 * (k as f64 * PI * t).cos()));
        b
    }

    fn basis_table(&self, coords: &[f64]) -> DMatrix<f64> {
        let t = self.terms();
        let mut out = DMatrix::zeros(coords.len(), t);
        for (a, &x) in coords.iter().enumerate() {
            for (k, v) in self.basis(x).into_iter().enumerate() {
                out[(a, k)] = v;
            }
        }
        out
    }

    pub(crate) fn eval_unchecked(&self, s: f64, t: f64) -> f64 {
        // ordered arguments make the floating-point sum exactly symmetric
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        series(&self.coefficients(), &self.basis(lo), &self.basis(hi))
    }

    pub fn kernel_eval(&self, s: f64, t: f64) -> Result<f64> {
        check_unit(s)?;
        check_unit(t)?;
        Ok(self.eval_unchecked(s, t))
    }

    /// Symmetric Gram matrix `[K(t_a, t_b)]` over the given coordinates.
    pub fn assemble_gram(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        self.pairwise(coords, false)
    }

    /// `[int_0^1 K(s, t_a) K(s, t_b) ds]`, closed form by orthonormality of the
    /// cosine basis: the series with squared coefficients.
    pub fn kernel_cross_integral(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        self.pairwise(coords, true)
    }

    fn pairwise(&self, coords: &[f64], squared: bool) -> Result<DMatrix<f64>> {
        if coords.is_empty() {
            return Err(invalid("empty coordinate list"));
        }
        coords.iter().try_for_each(|&t| check_unit(t))?;
        let mut c = self.coefficients();
        if squared {
            c.iter_mut().for_each(|x| *x *= *x);
        }
        let table: Vec<Vec<f64>> = coords.iter().map(|&t| self.basis(t)).collect();
        let n = coords.len();
        let mut out = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = series(&c, &table[a], &table[b]);
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        Ok(out)
    }

    /// Quadrature fallback for the cross-integral matrix.
    pub fn cross_integral_by_quadrature(&self, coords: &[f64], points: usize) -> Result<DMatrix<f64>> {
        coords.iter().try_for_each(|&t| check_unit(t))?;
        let (nodes, weights) = quadrature::simpson(points)?;
        let sections: Vec<Vec<f64>> = coords
            .iter()
            .map(|&t| nodes.iter().map(|&s| self.eval_unchecked(s, t)).collect())
            .collect();
        let n = coords.len();
        Ok(DMatrix::from_fn(n, n, |a, b| {
            weights
                .iter()
                .zip(sections[a].iter().zip(&sections[b]))
                .map(|(w, (x, y))| w * x * y)
                .sum()
        }))
    }

    /// Gram factor of the pooled coordinates through the finite feature
    /// expansion `K = F F^T`, `F = [sqrt(c_k) e_k(t_a)]`.
    ///
    /// Equivalent to `factorize_gram(assemble_gram(coords), ..)` but runs a thin
    /// SVD of `F` rather than a full `N x N` eigendecomposition.
    pub fn factor_pooled(&self, coords: &[f64], tol: f64, cap: usize) -> Result<GramFactor> {
        self.validate()?;
        let gram = self.assemble_gram(coords)?;
        let sqrt_c: Vec<f64> = self.coefficients().iter().map(|c| c.sqrt()).collect();
        let mut features = self.basis_table(coords);
        for (k, s) in sqrt_c.iter().enumerate() {
            features.column_mut(k).scale_mut(*s);
        }
        let svd = features.svd(true, false);
        let u = svd.u.expect("requested U");
        let eig: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
        let mut order: Vec<usize> = (0..eig.len()).collect();
        order.sort_by(|&a, &b| eig[b].total_cmp(&eig[a]));
        let values: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
        let vectors = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        GramFactor::from_spectrum(self.clone(), coords.to_vec(), gram, values, vectors, tol, cap)
    }
}

fn series(c: &[f64], a: &[f64], b: &[f64]) -> f64 {
    c.iter().zip(a.iter().zip(b)).map(|(c, (x, y))| c * x * y).sum()
}

/// Rank caps shared by every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GramOptions {
    /// Relative eigenvalue cutoff.
    pub tol: f64,
    /// Maximum retained rank per dimension.
    pub rank_cap: usize,
    /// Upper bound on the product of retained ranks across dimensions.
    pub max_core_size: usize,
}

impl Default for GramOptions {
    fn default() -> Self {
        GramOptions {
            tol: 1e-10,
            rank_cap: 12,
            max_core_size: 50,
        }
    }
}

impl GramOptions {
    /// Per-dimension cap for `p` dimensions: `rank_cap`, lowered until the
    /// `p`-th power fits in `max_core_size`.
    pub fn cap_for(&self, p: usize) -> usize {
        let mut cap = self.rank_cap.max(1);
        while cap > 1 && cap.checked_pow(p as u32).is_none_or(|v| v > self.max_core_size) {
            cap -= 1;
        }
        cap
    }
}

/// Low-rank factor `M M^T ~= K` of one dimension's pooled Gram matrix.
#[derive(Debug, Clone)]
pub struct GramFactor {
    pub spec: KernelSpec,
    /// Pooled coordinates in subject-major, observation-minor order.
    pub locations: Vec<f64>,
    pub gram: DMatrix<f64>,
    /// `N x q`.
    pub factor: DMatrix<f64>,
    /// `q x N` Moore-Penrose inverse of `factor`.
    pub pinv: DMatrix<f64>,
    pub retained_rank: usize,
    /// Full spectrum of the Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// `||M M^T - K||_F / ||K||_F` implied by the discarded spectrum.
    pub relative_residual: f64,
    /// `M^+ [c_k e_k(t_a)]`, so `section_map * basis(s) = M^+ z(s)`.
    section_map: DMatrix<f64>,
}

/// Truncated eigendecomposition of a symmetric PSD Gram matrix.
pub fn factorize_gram(gram: &DMatrix<f64>, tol: f64, cap: usize) -> Result<GramFactor> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return Err(invalid("Gram matrix must be square and non-empty"));
    }
    let scale = gram.amax();
    if (gram - gram.transpose()).amax() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(invalid("Gram matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    GramFactor::from_spectrum(KernelSpec::default(), Vec::new(), gram.clone(), values, vectors, tol, cap)
}

impl GramFactor {
    fn from_spectrum(
        spec: KernelSpec,
        locations: Vec<f64>,
        gram: DMatrix<f64>,
        values: Vec<f64>,
        mut vectors: DMatrix<f64>,
        tol: f64,
        cap: usize,
    ) -> Result<Self> {
        if !(tol >= 0.0) || cap == 0 {
            return Err(invalid("factorization needs tol >= 0 and cap >= 1"));
        }
        let top = values.first().copied().unwrap_or(0.0);
        if !(top > 0.0) {
            return Err(Error::NotPsd("Gram matrix has no positive eigenvalue".into()));
        }
        if let Some(&low) = values.last() {
            if low < -1e-8 * top {
                return Err(Error::NotPsd(format!(
                    "Gram eigenvalue {low:e} below -1e-8 * {top:e}; kernel is broken"
                )));
            }
        }
        let q = values
            .iter()
            .take(cap)
            .take_while(|&&v| v > tol * top)
            .count();
        // sign convention: largest-magnitude entry of each retained vector positive
        for c in 0..q {
            let col = vectors.column(c);
            let imax = col.iamax();
            if col[imax] < 0.0 {
                vectors.column_mut(c).neg_mut();
            }
        }
        let n = vectors.nrows();
        let mut factor = DMatrix::zeros(n, q);
        let mut pinv = DMatrix::zeros(q, n);
        for c in 0..q {
            let s = values[c].sqrt();
            for r in 0..n {
                factor[(r, c)] = vectors[(r, c)] * s;
                pinv[(c, r)] = vectors[(r, c)] / s;
            }
        }
        let total: f64 = values.iter().map(|v| v * v).sum();
        let dropped: f64 = values[q..].iter().map(|v| v * v).sum();
        let relative_residual = (dropped / total).sqrt();
        let section_map = if locations.is_empty() {
            DMatrix::zeros(q, 0)
        } else {
            let coef = spec.coefficients();
            let mut weighted = spec.basis_table(&locations);
            for (k, c) in coef.iter().enumerate() {
                weighted.column_mut(k).scale_mut(*c);
            }
            &pinv * weighted
        };
        Ok(GramFactor {
            spec,
            locations,
            gram,
            factor,
            pinv,
            retained_rank: q,
            eigenvalues: values,
            relative_residual,
            section_map,
        })
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.nrows() == 0
    }

    /// Kernel sections `z(s) = [K(t_a, s)]_a` at the pooled coordinates.
    pub fn sections(&self, s: f64) -> Result<DVector<f64>> {
        check_unit(s)?;
        Ok(DVector::from_iterator(
            self.locations.len(),
            self.locations.iter().map(|&t| self.spec.eval_unchecked(t, s)),
        ))
    }

    /// `M^+ z(s)`, the coordinates of the kernel section in the factor basis.
    pub fn project(&self, s: f64) -> Result<DVector<f64>> {
        check_unit(s)?;
        if self.locations.is_empty() {
            return Err(invalid("factor was built from a bare Gram matrix; no kernel sections"));
        }
        Ok(&self.section_map * DVector::from_vec(self.spec.basis(s)))
    }

    /// Row `a` of the factor, i.e. `M^+ z(t_a)` in exact arithmetic.
    pub fn row(&self, a: usize) -> DVector<f64> {
        self.factor.row(a).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_validated() {
        let k = KernelSpec::default();
        for &(s, t) in &[(0.1, 0.7), (0.0, 1.0), (0.33, 0.5)] {
            assert_eq!(k.kernel_eval(s, t).unwrap(), k.kernel_eval(t, s).unwrap());
        }
        assert!(k.kernel_eval(-0.1, 0.5).is_err());
        assert!(k.kernel_eval(0.5, 1.2).is_err());
        let bad = KernelSpec {
            decay_exponent: 1.0,
            ..KernelSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gram_single_and_duplicated() {
        let k = KernelSpec::default();
        let g = k.assemble_gram(&[0.3]).unwrap();
        assert_eq!(g[(0, 0)], k.kernel_eval(0.3, 0.3).unwrap());
        let g2 = k.assemble_gram(&[0.3, 0.3]).unwrap();
        let eig = SymmetricEigen::new(g2.clone());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-12);
        assert!(k.assemble_gram(&[]).is_err());
    }

    #[test]
    fn factorize_identity_and_rank_one() {
        let f = factorize_gram(&DMatrix::identity(4, 4), 1e-10, 4).unwrap();
        assert_eq!(f.retained_rank, 4);
        let mtm = f.factor.transpose() * &f.factor;
        assert!((mtm - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);

        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let g = &v * v.transpose();
        let f = factorize_gram(&g, 1e-10, 3).unwrap();
        assert_eq!(f.retained_rank, 1);
        let m = f.factor.column(0).into_owned();
        assert!((&m - &v).amax() < 1e-12 || (&m + &v).amax() < 1e-12);
    }

    #[test]
    fn factorize_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(factorize_gram(&asym, 1e-10, 2).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(factorize_gram(&neg, 1e-10, 2), Err(Error::NotPsd(_))));
    }

    #[test]
    fn feature_route_matches_eigen_route() {
        let k = KernelSpec::default();
        let coords: Vec<f64> = (0..20).map(|i| ((i * 37 % 20) as f64 + 0.5) / 20.0).collect();
        let a = k.factor_pooled(&coords, 1e-10, 8).unwrap();
        let b = factorize_gram(&a.gram, 1e-10, 8).unwrap();
        assert_eq!(a.retained_rank, b.retained_rank);
        let ra = &a.factor * a.factor.transpose();
        let rb = &b.factor * b.factor.transpose();
        assert!((ra - rb).amax() < 1e-12);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues).take(8) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_of_observed_point_is_factor_row() {
        let k = KernelSpec::default();
        let coords = [0.05, 0.4, 0.41, 0.9, 0.63];
        let f = k.factor_pooled(&coords, 1e-10, 5).unwrap();
        for (a, &t) in coords.iter().enumerate() {
            let proj = f.project(t).unwrap();
            let generic = &f.pinv * f.sections(t).unwrap();
            assert!((&proj - f.row(a)).amax() < 1e-12);
            assert!((&proj - generic).amax() < 1e-12);
        }
    }

    #[test]
    fn caps_respect_core_size() {
        let opts = GramOptions::default();
        assert_eq!(opts.cap_for(1), 12);
        assert_eq!(opts.cap_for(2), 7);
        assert_eq!(opts.cap_for(3), 3);
    }
}
