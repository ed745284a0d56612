use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{CrossProducts, FunctionalDataset};
use crate::error::{invalid, Error, Result};
use crate::kernel::{GramFactor, GramOptions, KernelSpec};
use crate::tensor::{khatri_rao, Shape};

/// Per-dimension Gram factors of one dataset's pooled locations.
#[derive(Debug, Clone)]
pub struct GramSet {
    pub factors: Vec<GramFactor>,
    pub options: GramOptions,
}

impl GramSet {
    pub fn build(data: &FunctionalDataset, spec: &KernelSpec, options: &GramOptions) -> Result<Self> {
        let cap = options.cap_for(data.p);
        let factors = (0..data.p)
            .map(|k| spec.factor_pooled(&data.pooled_coordinates(k), options.tol, cap))
            .collect::<Result<Vec<_>>>()?;
        Ok(GramSet {
            factors,
            options: options.clone(),
        })
    }

    pub fn p(&self) -> usize {
        self.factors.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.retained_rank).collect()
    }

    /// `prod_k q_k`, the side of the square unfolding.
    pub fn core_size(&self) -> usize {
        self.ranks().iter().product()
    }

    /// Shape `(q_1, .., q_p, q_1, .., q_p)` of the coefficient tensor.
    pub fn coeff_shape(&self) -> Shape {
        let r = self.ranks();
        Shape::new(r.iter().chain(r.iter()).copied().collect()).expect("ranks are positive")
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.factors[0].spec
    }

    /// `M_1^+ z_1(x_1) (x) .. (x) M_p^+ z_p(x_p)`, first dimension slowest.
    pub fn feature(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, model has p={}",
                x.len(),
                self.p()
            )));
        }
        let parts = self
            .factors
            .iter()
            .zip(x)
            .map(|(f, &s)| f.project(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::tensor::kron_vectors(&parts))
    }

    /// Feature rows for every observation of every subject.
    pub fn feature_rows(&self, data: &FunctionalDataset) -> Result<Vec<DMatrix<f64>>> {
        let q = self.core_size();
        data.subjects
            .iter()
            .map(|s| {
                let mut out = DMatrix::zeros(s.len(), q);
                for j in 0..s.len() {
                    out.row_mut(j).copy_from(&self.feature(s.location(j, data.p))?.transpose());
                }
                Ok(out)
            })
            .collect()
    }
}

/// Weighted off-diagonal squared error over subjects, evaluated from feature
/// rows: `sum_i w_i sum_{j != j'} (l_ij^T B l_ij' - Z_ijj')^2`.
#[derive(Debug, Clone)]
pub struct PairLoss {
    stacked: DMatrix<f64>,
    offsets: Vec<usize>,
    rows: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
}

impl PairLoss {
    /// Weights `1 / (n m_i (m_i - 1))`.
    pub fn new(rows: Vec<DMatrix<f64>>, cross: &CrossProducts) -> Result<Self> {
        if rows.len() != cross.z.len() || rows.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature blocks for {} cross-product blocks",
                rows.len(),
                cross.z.len()
            )));
        }
        let n = rows.len() as f64;
        let q = rows[0].ncols();
        let total: usize = rows.iter().map(|r| r.nrows()).sum();
        let mut stacked = DMatrix::zeros(total, q);
        let mut offsets = Vec::with_capacity(rows.len());
        let mut weights = Vec::with_capacity(rows.len());
        let mut at = 0;
        for (r, z) in rows.iter().zip(&cross.z) {
            let m = r.nrows();
            if z.nrows() != m || z.ncols() != m || r.ncols() != q {
                return Err(Error::DimensionMismatch(
                    "cross products do not match subject sizes".into(),
                ));
            }
            if m < 2 {
                return Err(invalid("every subject needs at least two observations"));
            }
            stacked.rows_mut(at, m).copy_from(r);
            offsets.push(at);
            weights.push(1.0 / (n * (m * (m - 1)) as f64));
            at += m;
        }
        Ok(PairLoss {
            stacked,
            offsets,
            rows,
            z: cross.z.clone(),
            weights,
        })
    }

    pub fn rows(&self) -> &[DMatrix<f64>] {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Loss at a square-unfolded coefficient matrix.
    pub fn eval(&self, b_sq: &DMatrix<f64>) -> f64 {
        let proj = &self.stacked * b_sq;
        let mut total = 0.0;
        for (i, rows) in self.rows.iter().enumerate() {
            let m = rows.nrows();
            let fitted = proj.rows(self.offsets[i], m) * rows.transpose();
            let z = &self.z[i];
            let mut s = 0.0;
            for a in 0..m {
                for b in 0..m {
                    if a != b {
                        let r = fitted[(a, b)] - z[(a, b)];
                        s += r * r;
                    }
                }
            }
            total += self.weights[i] * s;
        }
        total
    }
}

/// Everything the ADMM needs that does not depend on `(lambda, beta, eta)`.
#[derive(Debug, Clone)]
pub struct Precomputed {
    pub grams: Arc<GramSet>,
    pub p: usize,
    /// `Q = prod q_k`.
    pub core: usize,
    pub loss: PairLoss,
    /// Dense `Q^2 x Q^2` quadratic-form matrix acting on column-stacked
    /// `vec(B_square)`.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Normalized sum of squared off-diagonal cross products.
    pub c0: f64,
    /// Mean eigenvalue of `G`, the unit for relative `eta`.
    pub g_scale: f64,
    pub(crate) sym: SymBasis,
    /// `U^T G U` on the orthonormal basis of symmetric matrices.
    pub(crate) g_sym: DMatrix<f64>,
}

/// Orthonormal basis of symmetric `Q x Q` matrices: `E_aa` and
/// `(E_ab + E_ba) / sqrt 2` for `a < b`.
#[derive(Debug, Clone)]
pub(crate) struct SymBasis {
    pub q: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl SymBasis {
    pub fn new(q: usize) -> Self {
        let pairs = (0..q).flat_map(|a| (a..q).map(move |b| (a, b))).collect();
        SymBasis { q, pairs }
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// `U^T vec(m)`; symmetrizes implicitly.
    pub fn project(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().map(|&(a, b)| {
                if a == b {
                    m[(a, a)]
                } else {
                    (m[(a, b)] + m[(b, a)]) * std::f64::consts::FRAC_1_SQRT_2
                }
            }),
        )
    }

    /// `unvec(U u)`.
    pub fn lift(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.q, self.q);
        for (&(a, b), &x) in self.pairs.iter().zip(u.iter()) {
            if a == b {
                m[(a, a)] = x;
            } else {
                let v = x * std::f64::consts::FRAC_1_SQRT_2;
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }

    fn members(&self, alpha: usize) -> ([(usize, f64); 2], usize) {
        let (a, b) = self.pairs[alpha];
        let q = self.q;
        if a == b {
            ([(a + a * q, 1.0), (0, 0.0)], 1)
        } else {
            let w = std::f64::consts::FRAC_1_SQRT_2;
            ([(a + b * q, w), (b + a * q, w)], 2)
        }
    }

    pub fn reduce(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.dim();
        let mut out = DMatrix::zeros(s, s);
        for gm in 0..s {
            let (cols, nc) = self.members(gm);
            for al in gm..s {
                let (rows, nr) = self.members(al);
                let mut v = 0.0;
                for &(i, wi) in &rows[..nr] {
                    for &(j, wj) in &cols[..nc] {
                        v += wi * wj * g[(i, j)];
                    }
                }
                out[(al, gm)] = v;
                out[(gm, al)] = v;
            }
        }
        out
    }
}

/// Builds `L_i`, `G`, `h` and `c0` for the given data and Gram factors.
///
/// `L_i` stacks, for each observation of subject `i`, the Kronecker product of
/// that observation's factor rows across dimensions. With weights
/// `w_i = 1 / (n m_i (m_i - 1))`:
///
/// * `G = sum_i w_i (L_i (x) L_i)^T diag(vec I~) (L_i (x) L_i)`
/// * `h = 2 sum_i w_i (L_i (x) L_i)^T diag(vec I~) vec Z_i`
pub fn precompute(
    data: &FunctionalDataset,
    cross: &CrossProducts,
    grams: Arc<GramSet>,
) -> Result<Precomputed> {
    let p = grams.p();
    if p != data.p {
        return Err(Error::DimensionMismatch(format!(
            "{p} Gram factors for a p={} dataset",
            data.p
        )));
    }
    let total = data.total_observations();
    if grams.factors.iter().any(|f| f.len() != total) {
        return Err(Error::DimensionMismatch(
            "Gram factor rows do not match the pooled observations".into(),
        ));
    }
    if cross.z.len() != data.n() {
        return Err(Error::DimensionMismatch("cross products do not match subjects".into()));
    }
    let q = grams.core_size();
    let offsets = data.offsets();
    let rows: Vec<DMatrix<f64>> = data
        .subjects
        .iter()
        .zip(&offsets)
        .map(|(s, &o)| {
            let blocks: Vec<DMatrix<f64>> = grams
                .factors
                .iter()
                .map(|f| f.factor.rows(o, s.len()).transpose())
                .collect();
            let mut acc = blocks[0].clone();
            for b in &blocks[1..] {
                acc = khatri_rao(&acc, b).expect("equal observation counts");
            }
            acc.transpose()
        })
        .collect();
    let loss = PairLoss::new(rows, cross)?;

    // X_i[j, (r, r')] = l_jr l_jr' over r <= r'; G is assembled from
    // sum_i w_i (s_i s_i^T - X_i^T X_i) with s_i the column sums of X_i
    let sym = SymBasis::new(q);
    let sdim = sym.dim();
    let n = data.n();
    let mut sums = DMatrix::zeros(n, sdim);
    let mut squares = DMatrix::zeros(total, sdim);
    let mut h_mat = DMatrix::zeros(q, q);
    let mut c0 = 0.0;
    let mut at = 0;
    for (i, l) in loss.rows().iter().enumerate() {
        let w = loss.weights()[i];
        let sw = w.sqrt();
        let m = l.nrows();
        for (alpha, &(r, rp)) in sym.pairs.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                let x = sw * l[(j, r)] * l[(j, rp)];
                squares[(at + j, alpha)] = x;
                acc += x;
            }
            sums[(i, alpha)] = acc;
        }
        at += m;
        let mut zt = cross.z[i].clone();
        for j in 0..m {
            zt[(j, j)] = 0.0;
        }
        c0 += w * zt.iter().map(|x| x * x).sum::<f64>();
        h_mat += (l.transpose() * &zt * l) * (2.0 * w);
    }
    let pair = sums.transpose() * &sums - squares.transpose() * &squares;
    drop(squares);
    let mut index = vec![0usize; q * q];
    for (alpha, &(a, b)) in sym.pairs.iter().enumerate() {
        index[a * q + b] = alpha;
        index[b * q + a] = alpha;
    }
    let q2 = q * q;
    // G[r + c q, r' + c' q] = pair[(r, r'), (c, c')]
    let mut g = DMatrix::zeros(q2, q2);
    for cp in 0..q {
        for rp in 0..q {
            let col = rp + cp * q;
            for c in 0..q {
                let right = index[c * q + cp];
                for r in 0..q {
                    g[(r + c * q, col)] = pair[(index[r * q + rp], right)];
                }
            }
        }
    }
    let g_sym = sym.reduce(&g);
    let g_scale = g.trace() / q2 as f64;
    if !(g_scale > 0.0) {
        return Err(Error::Singular("loss quadratic form is identically zero".into()));
    }
    Ok(Precomputed {
        g_scale,
        grams,
        p,
        core: q,
        loss,
        g,
        h: DVector::from_column_slice(h_mat.as_slice()),
        c0,
        sym,
        g_sym,
    })
}

impl Precomputed {
    pub fn coeff_shape(&self) -> Shape {
        self.grams.coeff_shape()
    }

    /// `vec^T G vec - h^T vec + c0` at a square-unfolded coefficient matrix.
    pub fn quadratic_loss(&self, b_sq: &DMatrix<f64>) -> f64 {
        let v = DVector::from_column_slice(b_sq.as_slice());
        (v.transpose() * &self.g * &v)[(0, 0)] - self.h.dot(&v) + self.c0
    }

    pub(crate) fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.core, self.core, self.h.as_slice())
    }

    pub(crate) fn solve_operator(&self, eta: f64, blocks: usize) -> Result<SolveOperator> {
        SolveOperator::new(&self.g_sym, eta, blocks)
    }
}

/// `(2G + blocks * eta I)^{-1}` restricted to symmetric matrices.
#[derive(Debug, Clone)]
pub(crate) struct SolveOperator {
    pub eta: f64,
    pub inverse: DMatrix<f64>,
}

impl SolveOperator {
    fn new(g_sym: &DMatrix<f64>, eta: f64, blocks: usize) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(invalid(format!("eta must be positive and finite, got {eta}")));
        }
        let s = g_sym.nrows();
        let mut a = g_sym * 2.0;
        for i in 0..s {
            a[(i, i)] += blocks as f64 * eta;
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Singular("B-update system is not positive definite".into()))?;
        Ok(SolveOperator {
            eta,
            inverse: chol.inverse(),
        })
    }
}
