//! Composite Simpson rules on the unit interval and tensor grids.

use crate::error::{invalid, Result};

/// Nodes and weights of composite Simpson on `[0, 1]` with `n` points.
///
/// `n` must be odd and at least 3.
pub fn simpson(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(invalid(format!(
            "composite Simpson needs an odd point count >= 3, got {n}"
        )));
    }
    let h = 1.0 / (n - 1) as f64;
    let nodes = (0..n).map(|i| i as f64 * h).collect();
    let weights = (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    Ok((nodes, weights))
}

/// Tensor-product grid over `[0,1]^dim`, last coordinate fastest.
pub fn tensor_grid(nodes: &[f64], weights: &[f64], dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut pts = vec![Vec::new()];
    let mut ws = vec![1.0];
    for _ in 0..dim {
        let mut np = Vec::with_capacity(pts.len() * nodes.len());
        let mut nw = Vec::with_capacity(pts.len() * nodes.len());
        for (p, w) in pts.iter().zip(&ws) {
            for (x, wx) in nodes.iter().zip(weights) {
                let mut q = p.clone();
                q.push(*x);
                np.push(q);
                nw.push(w * wx);
            }
        }
        pts = np;
        ws = nw;
    }
    (pts, ws)
}
