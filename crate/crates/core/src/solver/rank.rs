use serde::{Deserialize, Serialize};

use super::prox::sym_eigenvalues;
use crate::error::{invalid, Result};
use crate::tensor::{one_way_unfold, square_unfold, DenseTensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub two_way: usize,
    pub one_way: Vec<usize>,
}

fn count_above(values: &[f64], threshold: f64) -> usize {
    let top = values.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&x| x > 0.0 && x >= threshold * top).count()
}

/// Numerical two-way and one-way ranks relative to the leading value.
pub fn rank_report(coeffs: &DenseTensor, threshold: f64) -> Result<RankReport> {
    if !(threshold >= 0.0) {
        return Err(invalid("rank threshold must be nonnegative"));
    }
    let sq = square_unfold(coeffs)?;
    let ev = sym_eigenvalues(&sq);
    let two_way = count_above(ev.as_slice(), threshold);
    let one_way = (0..coeffs.order() / 2)
        .map(|k| {
            let s = one_way_unfold(coeffs, k)?.singular_values();
            Ok(count_above(s.as_slice(), threshold))
        })
        .collect::<Result<_>>()?;
    Ok(RankReport { two_way, one_way })
}
