use nalgebra::{DMatrix, DVector};

use super::dense::DenseTensor;
use crate::error::{Error, Result};

/// `a x_mode p`: contracts mode `mode` of `a` against the columns of `p`.
///
/// `(a x_n p)[.., j, ..] = sum_i a[.., i, ..] * p[j, i]`.
pub fn n_mode_product(a: &DenseTensor, p: &DMatrix<f64>, mode: usize) -> Result<DenseTensor> {
    a.check_mode(mode)?;
    let dims = a.dims();
    let q = dims[mode];
    if p.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "mode-{mode} product: matrix has {} columns, tensor extent is {q}",
            p.ncols()
        )));
    }
    let outer: usize = dims[..mode].iter().product();
    let inner: usize = dims[mode + 1..].iter().product();
    let rows = p.nrows();
    let mut out_dims = dims.to_vec();
    out_dims[mode] = rows;
    let src = a.data();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        let src_block = &src[o * q * inner..(o + 1) * q * inner];
        let dst_block = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for j in 0..rows {
            let dst = &mut dst_block[j * inner..(j + 1) * inner];
            for i in 0..q {
                let w = p[(j, i)];
                if w == 0.0 {
                    continue;
                }
                let s = &src_block[i * inner..(i + 1) * inner];
                for (d, &x) in dst.iter_mut().zip(s) {
                    *d += w * x;
                }
            }
        }
    }
    DenseTensor::from_vec(out_dims, out)
}

/// Standard Kronecker product.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-wise Kronecker product of two matrices with equal column counts.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "Khatri-Rao product needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ra * rb, a.ncols());
    for c in 0..a.ncols() {
        for i in 0..ra {
            let x = a[(i, c)];
            for k in 0..rb {
                out[(i * rb + k, c)] = x * b[(k, c)];
            }
        }
    }
    Ok(out)
}

/// `g x_1 u_1 x_2 ... x_d u_d`, applied in mode order.
pub fn tucker_compose(g: &DenseTensor, factors: &[DMatrix<f64>]) -> Result<DenseTensor> {
    if factors.len() != g.order() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors for a tensor of order {}",
            factors.len(),
            g.order()
        )));
    }
    factors
        .iter()
        .enumerate()
        .try_fold(g.clone(), |acc, (k, u)| n_mode_product(&acc, u, k))
}

/// Column-stacking vectorization.
pub fn vec_columns(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major, so the raw slice is already vec(m)
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_columns`].
pub fn unvec_columns(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot be reshaped to {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker chain `m_0 (x) m_1 (x) ... (x) m_last`.
pub fn kronecker_chain(mats: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut iter = mats.iter();
    let first = match iter.next() {
        Some(m) => (*m).clone(),
        None => return DMatrix::from_element(1, 1, 1.0),
    };
    iter.fold(first, |acc, m| acc.kronecker(*m))
}

/// Kronecker chain of vectors, earliest factor with the largest stride.
pub fn kron_vectors(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut out = vec![1.0];
    for v in vs {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &a in &out {
            next.extend(v.iter().map(|&b| a * b));
        }
        out = next;
    }
    DVector::from_vec(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{matricize, Shape};

    #[test]
    fn identity_mode_product_is_noop() {
        let a = DenseTensor::from_vec(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let out = n_mode_product(&a, &DMatrix::identity(2, 2), 0).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn diagonal_mode_product_example() {
        let a = DenseTensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let out = n_mode_product(&a, &p, 0).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 9.0, 12.0]);
    }

    #[test]
    fn zero_matrix_annihilates() {
        let a = DenseTensor::from_vec(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let out = n_mode_product(&a, &DMatrix::zeros(4, 3), 1).unwrap();
        assert_eq!(out.dims(), &[2, 4, 2]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let a = DenseTensor::from_vec(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(
            n_mode_product(&a, &DMatrix::zeros(2, 2), 1),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mode_product_matches_triple_loop() {
        let a = DenseTensor::from_vec(vec![2, 3, 2], (0..12).map(|x| (x as f64).sin()).collect())
            .unwrap();
        let p = DMatrix::from_fn(4, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let out = n_mode_product(&a, &p, 1).unwrap();
        for l1 in 0..2 {
            for j in 0..4 {
                for l3 in 0..2 {
                    let want: f64 = (0..3).map(|i| a.get(&[l1, i, l3]) * p[(j, i)]).sum();
                    assert!((out.get(&[l1, j, l3]) - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn kronecker_examples() {
        assert_eq!(
            kronecker(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)),
            DMatrix::<f64>::identity(6, 6)
        );
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(kronecker(&a, &b).as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        assert!(kronecker(&a, &DMatrix::zeros(2, 2)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn khatri_rao_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let kr = khatri_rao(&i2, &i2).unwrap();
        let want = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(kr, want);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_column_slice(3, 1, &[3.0, 4.0, 5.0]);
        assert_eq!(khatri_rao(&a, &b).unwrap(), kronecker(&a, &b));
        assert!(khatri_rao(&a, &DMatrix::zeros(3, 1)).unwrap().iter().all(|&x| x == 0.0));
        assert!(khatri_rao(&a, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn tucker_identity_and_zero() {
        let g = DenseTensor::from_vec(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let ids = vec![DMatrix::identity(2, 2); 3];
        assert_eq!(tucker_compose(&g, &ids).unwrap(), g);
        let z = DenseTensor::zeros(Shape::new(vec![2, 2, 2]).unwrap());
        let f = vec![DMatrix::from_element(3, 2, 1.5); 3];
        let out = tucker_compose(&z, &f).unwrap();
        assert_eq!(out.dims(), &[3, 3, 3]);
        assert!(out.data().iter().all(|&x| x == 0.0));
        // order-2 sanity: a = u0 g u1^T
        let g2 = DenseTensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u0 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let u1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let a = tucker_compose(&g2, &[u0.clone(), u1.clone()]).unwrap();
        let want = &u0 * matricize(&g2, 0).unwrap() * u1.transpose();
        assert_eq!(matricize(&a, 0).unwrap(), want);
    }

    #[test]
    fn vec_roundtrip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec_columns(&m);
        assert_eq!(v.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(unvec_columns(&v, 2, 3).unwrap(), m);
    }
}
