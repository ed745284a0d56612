//! Matricization and functional unfoldings.
//!
//! Two orderings coexist:
//!
//! * `matricize` places the remaining modes along the columns with the
//!   *earliest* mode varying fastest,
//!   `j = sum_{i != n} l_i * prod_{m < i, m != n} q_m` (zero-based).
//! * `square_unfold` pairs the first half of the modes against the second
//!   half with the *earliest* mode having the largest stride inside each half.
//!
//! Each has an exact inverse (`fold`, `square_fold`).

use nalgebra::DMatrix;

use super::dense::{DenseTensor, Shape};
use crate::error::{Error, Result};

/// For every linear element of a tensor of `shape`, its (row, column) in the
/// mode-`mode` matricization.
pub fn matricize_index_map(shape: &Shape, mode: usize) -> Vec<(usize, usize)> {
    let dims = shape.dims();
    let mut col_stride = vec![0usize; dims.len()];
    let mut acc = 1;
    for (i, &q) in dims.iter().enumerate() {
        if i == mode {
            continue;
        }
        col_stride[i] = acc;
        acc *= q;
    }
    shape
        .indices()
        .map(|idx| {
            let col = idx
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != mode)
                .map(|(i, &l)| l * col_stride[i])
                .sum();
            (idx[mode], col)
        })
        .collect()
}

/// For every linear element of an even-order tensor, its (row, column) in the
/// square unfolding.
pub fn square_index_map(shape: &Shape) -> Result<Vec<(usize, usize)>> {
    let d = shape.order();
    if !d.is_multiple_of(2) {
        return Err(Error::OddOrder(d));
    }
    let half = d / 2;
    let dims = shape.dims();
    let mut stride = vec![1usize; d];
    for i in (0..half).rev() {
        stride[i] = if i + 1 < half { stride[i + 1] * dims[i + 1] } else { 1 };
    }
    for i in (half..d).rev() {
        stride[i] = if i + 1 < d { stride[i + 1] * dims[i + 1] } else { 1 };
    }
    Ok(shape
        .indices()
        .map(|idx| {
            let r = (0..half).map(|i| idx[i] * stride[i]).sum();
            let c = (half..d).map(|i| idx[i] * stride[i]).sum();
            (r, c)
        })
        .collect())
}

fn square_extents(shape: &Shape) -> (usize, usize) {
    let half = shape.order() / 2;
    let dims = shape.dims();
    (
        dims[..half].iter().product(),
        dims[half..].iter().product(),
    )
}

/// Mode-`mode` matricization, a `q_mode x prod_{k != mode} q_k` matrix.
pub fn matricize(a: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    a.check_mode(mode)?;
    let rows = a.dims()[mode];
    let cols = a.shape().len() / rows;
    let mut out = DMatrix::zeros(rows, cols);
    for (lin, (r, c)) in matricize_index_map(a.shape(), mode).into_iter().enumerate() {
        out[(r, c)] = a.data()[lin];
    }
    Ok(out)
}

/// Inverse of [`matricize`].
pub fn fold(mat: &DMatrix<f64>, mode: usize, shape: &Shape) -> Result<DenseTensor> {
    if mode >= shape.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.order(),
        });
    }
    let rows = shape.dims()[mode];
    let cols = shape.len() / rows;
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot fold a {}x{} matrix along mode {mode} of {:?}",
            mat.nrows(),
            mat.ncols(),
            shape.dims()
        )));
    }
    let data = matricize_index_map(shape, mode)
        .into_iter()
        .map(|(r, c)| mat[(r, c)])
        .collect();
    DenseTensor::from_vec(shape.dims().to_vec(), data)
}

/// Square unfolding of an even-order tensor.
pub fn square_unfold(a: &DenseTensor) -> Result<DMatrix<f64>> {
    let map = square_index_map(a.shape())?;
    let (rows, cols) = square_extents(a.shape());
    let mut out = DMatrix::zeros(rows, cols);
    for (lin, (r, c)) in map.into_iter().enumerate() {
        out[(r, c)] = a.data()[lin];
    }
    Ok(out)
}

/// Inverse of [`square_unfold`].
pub fn square_fold(mat: &DMatrix<f64>, shape: &Shape) -> Result<DenseTensor> {
    let map = square_index_map(shape)?;
    let (rows, cols) = square_extents(shape);
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot square-fold a {}x{} matrix into {:?}",
            mat.nrows(),
            mat.ncols(),
            shape.dims()
        )));
    }
    let data = map.into_iter().map(|(r, c)| mat[(r, c)]).collect();
    DenseTensor::from_vec(shape.dims().to_vec(), data)
}

/// One-way unfolding along dimension `j` of an order-2p coefficient tensor.
///
/// Same matrix as `matricize(a, j)`; restricted to the first half of the
/// modes, which index the first argument of the covariance.
pub fn one_way_unfold(a: &DenseTensor, j: usize) -> Result<DMatrix<f64>> {
    let d = a.order();
    if !d.is_multiple_of(2) {
        return Err(Error::OddOrder(d));
    }
    if j >= d / 2 {
        return Err(Error::ModeOutOfRange { mode: j, order: d / 2 });
    }
    matricize(a, j)
}
