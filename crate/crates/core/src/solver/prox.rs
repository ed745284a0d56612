use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::tensor::{
    fold, matricize, matricize_index_map, square_fold, square_index_map, square_unfold, DenseTensor,
    Shape,
};

fn check_threshold(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(invalid(format!("threshold must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Singular-value soft-thresholding of the mode-`k` unfolding (`k` zero-based,
/// within the first half of the modes).
pub fn prox_trace_mode_k(a: &DenseTensor, k: usize, v: f64) -> Result<DenseTensor> {
    check_threshold(v)?;
    if !a.order().is_multiple_of(2) {
        return Err(Error::OddOrder(a.order()));
    }
    if k >= a.order() / 2 {
        return Err(Error::ModeOutOfRange {
            mode: k,
            order: a.order() / 2,
        });
    }
    let m = matricize(a, k)?;
    fold(&shrink_singular(&m, v), k, a.shape())
}

/// Eigenvalue soft-thresholding of the symmetrized square unfolding.
pub fn prox_psd(a: &DenseTensor, v: f64) -> Result<DenseTensor> {
    check_threshold(v)?;
    let sq = square_unfold(a)?;
    if sq.nrows() != sq.ncols() {
        return Err(Error::DimensionMismatch("square unfolding is not square".into()));
    }
    let (out, _) = shrink_eigen(&sq, v);
    square_fold(&out, a.shape())
}

/// `U diag((s - v)_+) V^T` for the SVD `U diag(s) V^T` of `m`.
pub(crate) fn shrink_singular(m: &DMatrix<f64>, v: f64) -> DMatrix<f64> {
    if v == 0.0 {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let c = s - v;
        if c > 0.0 {
            out += (u.column(i) * c) * vt.row(i);
        }
    }
    out
}

/// Symmetrize, eigendecompose and keep `(lambda - v)_+`. Returns the
/// reconstruction, exactly symmetric, and the kept eigenvalues.
pub(crate) fn shrink_eigen(sq: &DMatrix<f64>, v: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = sq.nrows();
    let sym = (sq + sq.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let c = l - v;
        if c > 0.0 {
            kept.push(c);
            cols.push(i);
        }
    }
    let mut out = DMatrix::zeros(n, n);
    if !cols.is_empty() {
        let p = DMatrix::from_fn(n, cols.len(), |r, j| eig.eigenvectors[(r, cols[j])]);
        let scaled = DMatrix::from_fn(n, cols.len(), |r, j| p[(r, j)] * kept[j]);
        let full = scaled * p.transpose();
        for c in 0..n {
            for r in c..n {
                let x = 0.5 * (full[(r, c)] + full[(c, r)]);
                out[(r, c)] = x;
                out[(c, r)] = x;
            }
        }
    }
    (out, kept)
}

/// Index maps between the square unfolding and each one-way unfolding of
/// a fixed coefficient shape, so the solver can stay in square form.
#[derive(Debug, Clone)]
pub(crate) struct UnfoldMaps {
    pub q: usize,
    /// For mode `k`: extents of the unfolding and, for each column-major
    /// position of it, the column-major position in the square unfolding.
    pub modes: Vec<(usize, usize, Vec<usize>)>,
}

impl UnfoldMaps {
    pub fn new(shape: &Shape) -> Result<Self> {
        let sq = square_index_map(shape)?;
        let q: usize = shape.dims()[..shape.order() / 2].iter().product();
        let modes = (0..shape.order() / 2)
            .map(|k| {
                let rows = shape.dims()[k];
                let cols = shape.len() / rows;
                let mut gather = vec![0; shape.len()];
                for (lin, (r, c)) in matricize_index_map(shape, k).into_iter().enumerate() {
                    let (sr, sc) = sq[lin];
                    gather[r + c * rows] = sr + sc * q;
                }
                (rows, cols, gather)
            })
            .collect();
        Ok(UnfoldMaps { q, modes })
    }

    pub fn one_way(&self, sq: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let (rows, cols, gather) = &self.modes[k];
        let src = sq.as_slice();
        DMatrix::from_iterator(*rows, *cols, gather.iter().map(|&g| src[g]))
    }

    pub fn back(&self, m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let (_, _, gather) = &self.modes[k];
        let mut out = DMatrix::zeros(self.q, self.q);
        let dst = out.as_mut_slice();
        for (&g, &x) in gather.iter().zip(m.as_slice()) {
            dst[g] = x;
        }
        out
    }

    /// One-way prox in square form.
    pub fn prox_one_way(&self, sq: &DMatrix<f64>, k: usize, v: f64) -> DMatrix<f64> {
        if v == 0.0 {
            return sq.clone();
        }
        self.back(&shrink_singular(&self.one_way(sq, k), v), k)
    }

    pub fn nuclear_norm(&self, sq: &DMatrix<f64>, k: usize) -> f64 {
        self.one_way(sq, k).singular_values().iter().sum()
    }
}

/// Sum of singular values.
pub(crate) fn nuclear(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().sum()
}

pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::one_way_unfold;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
        let n = dims.iter().product();
        DenseTensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn trace_prox_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(vec![2, 3, 2, 3], &mut rng);
        let out = prox_trace_mode_k(&a, 1, 0.0).unwrap();
        assert!(out.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn trace_prox_diagonal_example() {
        let mut b = DenseTensor::zeros(Shape::new(vec![2, 2]).unwrap());
        b.set(&[0, 0], 3.0);
        b.set(&[1, 1], 1.0);
        let out = prox_trace_mode_k(&b, 0, 2.0).unwrap();
        assert!((out.get(&[0, 0]) - 1.0).abs() < 1e-12);
        assert!(out.get(&[1, 1]).abs() < 1e-12);
        assert!(out.get(&[0, 1]).abs() < 1e-12 && out.get(&[1, 0]).abs() < 1e-12);
    }

    #[test]
    fn trace_prox_large_threshold_zeroes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(vec![3, 2, 3, 2], &mut rng);
        let top = nuclear_top(&one_way_unfold(&a, 0).unwrap());
        let out = prox_trace_mode_k(&a, 0, top).unwrap();
        assert!(out.frobenius_norm() < 1e-12);
    }

    fn nuclear_top(m: &DMatrix<f64>) -> f64 {
        m.singular_values().max()
    }

    #[test]
    fn trace_prox_rejects_bad_input() {
        let a = DenseTensor::zeros(Shape::new(vec![2, 2]).unwrap());
        assert!(prox_trace_mode_k(&a, 1, 0.1).is_err());
        assert!(prox_trace_mode_k(&a, 0, -1.0).is_err());
        assert!(prox_psd(&a, f64::NAN).is_err());
    }

    #[test]
    fn psd_prox_examples() {
        let d = DenseTensor::from_vec(vec![2, 2], vec![2.0, 0.0, 0.0, -1.0]).unwrap();
        let out = prox_psd(&d, 0.0).unwrap();
        assert_eq!(out.data(), &[2.0, 0.0, 0.0, 0.0]);
        let n = DenseTensor::from_vec(vec![2, 2], vec![0.0, 2.0, 0.0, 0.0]).unwrap();
        let out = prox_psd(&n, 0.0).unwrap();
        for &x in out.data() {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn psd_prox_keeps_psd_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let sq = &g * g.transpose();
        let a = square_fold(&sq, &Shape::new(vec![2, 2, 2, 2]).unwrap()).unwrap();
        let out = prox_psd(&a, 0.0).unwrap();
        assert!(out.max_abs_diff(&a) < 1e-12);
        let s = square_unfold(&prox_psd(&random(vec![2, 2, 2, 2], &mut rng), 0.1).unwrap()).unwrap();
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn square_form_maps_agree_with_tensor_unfoldings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = Shape::new(vec![2, 3, 2, 3]).unwrap();
        let maps = UnfoldMaps::new(&shape).unwrap();
        let a = random(vec![2, 3, 2, 3], &mut rng);
        let sq = square_unfold(&a).unwrap();
        for k in 0..2 {
            let direct = one_way_unfold(&a, k).unwrap();
            assert_eq!(maps.one_way(&sq, k), direct);
            assert_eq!(maps.back(&direct, k), sq);
            let via_tensor = square_unfold(&prox_trace_mode_k(&a, k, 0.3).unwrap()).unwrap();
            assert!((maps.prox_one_way(&sq, k, 0.3) - via_tensor).abs().max() < 1e-14);
        }
    }
}
