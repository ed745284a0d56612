#![allow(dead_code)]

use std::sync::Arc;

use mcov::dataset::{cross_products, CrossProducts, FunctionalDataset, MeanEstimate, Subject};
use mcov::kernel::{GramOptions, KernelSpec};
use mcov::solver::{precompute, FitConfig, GramSet, Precomputed};
use mcov::tensor::{matricize, square_unfold, DenseTensor, Shape};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random-design data from a few smooth cosine components with Gaussian
/// scores, scaled by `amplitude`.
pub fn toy_dataset(p: usize, n: usize, m: usize, amplitude: f64, noise: f64, seed: u64) -> FunctionalDataset {
    let mut r = rng(seed);
    let comps: Vec<Vec<usize>> = vec![vec![1; p], (0..p).map(|k| if k == 0 { 2 } else { 1 }).collect(), vec![2; p]];
    let sd = [1.0, 0.6, 0.3];
    let subjects = (0..n)
        .map(|i| {
            let z: Vec<f64> = sd.iter().map(|s| s * r.sample::<f64, _>(StandardNormal)).collect();
            let mut locations = Vec::new();
            let mut values = Vec::new();
            for _ in 0..m {
                let t: Vec<f64> = (0..p).map(|_| r.random::<f64>()).collect();
                let x: f64 = comps
                    .iter()
                    .zip(&z)
                    .map(|(c, zk)| {
                        zk * c
                            .iter()
                            .zip(&t)
                            .map(|(&f, &u)| 2f64.sqrt() * (f as f64 * std::f64::consts::PI * u).cos())
                            .product::<f64>()
                    })
                    .sum();
                let e: f64 = r.sample(StandardNormal);
                locations.extend_from_slice(&t);
                values.push(amplitude * x + noise * e);
            }
            Subject { id: format!("s{i}"), locations, values }
        })
        .collect();
    FunctionalDataset::new(p, subjects).unwrap()
}

pub struct Problem {
    pub data: FunctionalDataset,
    pub cross: CrossProducts,
    pub grams: Arc<GramSet>,
    pub pre: Precomputed,
}

pub fn problem(data: FunctionalDataset, cap: usize) -> Problem {
    let cross = cross_products(&data, &MeanEstimate::Zero);
    let options = GramOptions {
        rank_cap: cap,
        max_core_size: cap.pow(data.p as u32),
        ..GramOptions::default()
    };
    let grams = Arc::new(GramSet::build(&data, &KernelSpec::default(), &options).unwrap());
    let pre = precompute(&data, &cross, grams.clone()).unwrap();
    Problem { data, cross, grams, pre }
}

/// Observation features built directly from the factor rows, first
/// dimension slowest.
pub fn feature_rows(grams: &GramSet, data: &FunctionalDataset) -> Vec<DMatrix<f64>> {
    let mut offset = 0;
    data.subjects
        .iter()
        .map(|s| {
            let m = s.len();
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|j| {
                    let mut v = vec![1.0];
                    for f in &grams.factors {
                        let r = f.factor.row(offset + j);
                        v = v.iter().flat_map(|a| r.iter().map(move |b| a * b)).collect();
                    }
                    v
                })
                .collect();
            offset += m;
            DMatrix::from_fn(m, rows[0].len(), |a, b| rows[a][b])
        })
        .collect()
}

/// Squared-error loss by explicit double loops over observation pairs.
pub fn direct_loss(p: &Problem, b_sq: &DMatrix<f64>) -> f64 {
    let rows = feature_rows(&p.grams, &p.data);
    let n = p.data.n() as f64;
    let mut total = 0.0;
    for (i, l) in rows.iter().enumerate() {
        let m = l.nrows();
        let mut s = 0.0;
        for a in 0..m {
            for c in 0..m {
                if a == c {
                    continue;
                }
                let la = l.row(a).transpose();
                let lc = l.row(c).transpose();
                let fitted = (la.transpose() * b_sq * lc)[(0, 0)];
                s += (fitted - p.cross.z[i][(a, c)]).powi(2);
            }
        }
        total += s / (n * (m * (m - 1)) as f64);
    }
    total
}

/// Penalized objective from scratch: explicit loss, eigenvalues of the
/// square unfolding and SVDs of the one-way unfoldings.
pub fn oracle_objective(p: &Problem, b: &DenseTensor, config: &FitConfig) -> f64 {
    let sq = square_unfold(b).unwrap();
    let eig = SymmetricEigen::new((&sq + sq.transpose()) * 0.5);
    let top = eig.eigenvalues.max().max(0.0);
    if eig.eigenvalues.min() < -1e-8 * top || (&sq - sq.transpose()).abs().max() > 1e-10 * sq.abs().max() {
        return f64::INFINITY;
    }
    let pp = p.grams.p();
    let trace: f64 = eig.eigenvalues.iter().sum();
    let nuclear: f64 = (0..pp)
        .map(|k| matricize(b, k).unwrap().svd(false, false).singular_values.sum())
        .sum();
    direct_loss(p, &sq)
        + config.lambda * (config.beta * trace + (1.0 - config.beta) / pp as f64 * nuclear)
}

pub fn random_symmetric(shape: &Shape, r: &mut ChaCha8Rng, scale: f64) -> DenseTensor {
    let q: usize = shape.dims()[..shape.order() / 2].iter().product();
    let a = DMatrix::from_fn(q, q, |_, _| r.random_range(-scale..scale));
    mcov::tensor::square_fold(&((&a + a.transpose()) * 0.5), shape).unwrap()
}

pub fn random_psd(shape: &Shape, r: &mut ChaCha8Rng, scale: f64, rank: usize) -> DenseTensor {
    let q: usize = shape.dims()[..shape.order() / 2].iter().product();
    let g = DMatrix::from_fn(q, rank, |_, _| r.random_range(-scale..scale));
    mcov::tensor::square_fold(&(&g * g.transpose()), shape).unwrap()
}

pub fn min_eig_ratio(b: &DenseTensor) -> f64 {
    let sq = square_unfold(b).unwrap();
    let ev = SymmetricEigen::new((&sq + sq.transpose()) * 0.5).eigenvalues;
    let top = ev.max();
    if top <= 0.0 {
        return 0.0;
    }
    ev.min() / top
}

/// The returned coefficients must be PSD to `-1e-10` relative.
pub fn assert_psd(b: &DenseTensor) {
    let r = min_eig_ratio(b);
    assert!(r >= -1e-10, "min eigenvalue ratio {r:e}");
}

pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Zero-mean fit of a simulated dataset with the default kernel and caps.
pub fn sim_fit(setting: &mcov::sim::SimSetting, config: &FitConfig) -> (FunctionalDataset, mcov::solver::CovarianceFit) {
    let data = mcov::sim::generate(setting).unwrap();
    let cross = cross_products(&data, &MeanEstimate::Zero);
    let grams = Arc::new(GramSet::build(&data, &KernelSpec::default(), &GramOptions::default()).unwrap());
    let pre = precompute(&data, &cross, grams).unwrap();
    let (fit, _) = mcov::solver::fit_precomputed(&pre, config, None).unwrap();
    assert_psd(&fit.coeffs);
    (data, fit)
}
