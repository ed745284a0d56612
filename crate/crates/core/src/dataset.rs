//! Functional-data ingestion, mean handling, cross products and CV folds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;

/// One sampled field: `m` locations in `[0,1]^p` and their measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Row-major `m x p`.
    pub locations: Vec<f64>,
    pub values: Vec<f64>,
}

impl Subject {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn location(&self, j: usize, p: usize) -> &[f64] {
        &self.locations[j * p..(j + 1) * p]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub p: usize,
    pub subjects: Vec<Subject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n: usize,
    pub p: usize,
    pub total_observations: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub m_mean: f64,
}

impl FunctionalDataset {
    pub fn new(p: usize, subjects: Vec<Subject>) -> Result<Self> {
        if p == 0 {
            return Err(invalid("input dimension p must be at least 1"));
        }
        for s in &subjects {
            if s.locations.len() != s.values.len() * p {
                return Err(Error::DimensionMismatch(format!(
                    "subject {} has {} coordinates for {} values at p={p}",
                    s.id,
                    s.locations.len(),
                    s.values.len()
                )));
            }
            if s.len() < 2 {
                return Err(invalid(format!(
                    "subject {} has {} observations; at least 2 are required",
                    s.id,
                    s.len()
                )));
            }
            if let Some(x) = s.locations.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(invalid(format!("subject {}: coordinate {x} outside [0,1]", s.id)));
            }
        }
        Ok(FunctionalDataset { p, subjects })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(Subject::len).sum()
    }

    /// Pooled coordinates of dimension `k`, subject-major then observation.
    pub fn pooled_coordinates(&self, k: usize) -> Vec<f64> {
        self.subjects
            .iter()
            .flat_map(|s| (0..s.len()).map(move |j| s.locations[j * self.p + k]))
            .collect()
    }

    /// Row offset of each subject inside the pooled enumeration.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.subjects
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.len();
                o
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FunctionalDataset {
        FunctionalDataset {
            p: self.p,
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let ms: Vec<usize> = self.subjects.iter().map(Subject::len).collect();
        DatasetStats {
            n: self.n(),
            p: self.p,
            total_observations: ms.iter().sum(),
            m_min: ms.iter().copied().min().unwrap_or(0),
            m_max: ms.iter().copied().max().unwrap_or(0),
            m_mean: if ms.is_empty() {
                0.0
            } else {
                ms.iter().sum::<usize>() as f64 / ms.len() as f64
            },
        }
    }

    /// Writes the `subject,t1,..,tp,y` CSV. Values use the shortest
    /// round-tripping decimal form, so reloading is bit-exact.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("subject");
        for k in 1..=self.p {
            let _ = write!(out, ",t{k}");
        }
        out.push_str(",y\n");
        for s in &self.subjects {
            for j in 0..s.len() {
                out.push_str(&s.id);
                for x in s.location(j, self.p) {
                    let _ = write!(out, ",{x:?}");
                }
                let _ = writeln!(out, ",{:?}", s.values[j]);
            }
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Result of [`load_csv`]: the dataset plus subjects dropped for having fewer
/// than two observations.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: FunctionalDataset,
    pub warnings: Vec<String>,
}

pub fn load_csv(path: &Path) -> Result<LoadedDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, path)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<LoadedDataset> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "subject" || cols[cols.len() - 1] != "y" {
        return Err(perr(1, format!("expected header subject,t1,..,tp,y; got `{header}`")));
    }
    let p = cols.len() - 2;
    for (k, c) in cols[1..=p].iter().enumerate() {
        if *c != format!("t{}", k + 1) {
            return Err(perr(1, format!("header column `{c}` should be t{}", k + 1)));
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Subject> = HashMap::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != p + 2 {
            return Err(perr(line_no, format!("expected {} fields, found {}", p + 2, fields.len())));
        }
        let id = fields[0].to_string();
        let mut nums = Vec::with_capacity(p + 1);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| perr(line_no, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(perr(line_no, format!("`{f}` is not finite")));
            }
            nums.push(v);
        }
        if let Some(x) = nums[..p].iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(perr(line_no, format!("coordinate {x} outside [0,1]")));
        }
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Subject {
                id,
                locations: Vec::new(),
                values: Vec::new(),
            }
        });
        entry.locations.extend_from_slice(&nums[..p]);
        entry.values.push(nums[p]);
    }
    let mut subjects = Vec::with_capacity(order.len());
    let mut warnings = Vec::new();
    for id in order {
        let s = groups.remove(&id).expect("grouped above");
        if s.len() < 2 {
            warnings.push(format!("subject {id} dropped: only {} observation", s.len()));
        } else {
            subjects.push(s);
        }
    }
    Ok(LoadedDataset {
        data: FunctionalDataset::new(p, subjects)?,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    #[default]
    Zero,
    KernelRidge,
}

/// Estimated mean function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanEstimate {
    Zero,
    KernelRidge {
        spec: KernelSpec,
        p: usize,
        /// Row-major `N x p` pooled locations.
        locations: Vec<f64>,
        coefficients: Vec<f64>,
        ridge: f64,
    },
}

fn product_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| spec.eval_unchecked(*a, *b)).product()
}

impl MeanEstimate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanEstimate::Zero => 0.0,
            MeanEstimate::KernelRidge {
                spec,
                p,
                locations,
                coefficients,
                ..
            } => coefficients
                .iter()
                .enumerate()
                .map(|(a, c)| c * product_kernel(spec, &locations[a * p..(a + 1) * p], x))
                .sum(),
        }
    }
}

/// Zero mean, or kernel ridge regression over the pooled tensor-product
/// kernel: `min (1/N) sum (y - f)^2 + ridge ||f||^2`.
pub fn fit_mean(
    data: &FunctionalDataset,
    spec: &KernelSpec,
    ridge: f64,
    mode: MeanMode,
) -> Result<MeanEstimate> {
    match mode {
        MeanMode::Zero => Ok(MeanEstimate::Zero),
        MeanMode::KernelRidge => {
            if !(ridge >= 0.0) {
                return Err(invalid(format!("ridge must be nonnegative, got {ridge}")));
            }
            spec.validate()?;
            let p = data.p;
            let locations: Vec<f64> = data
                .subjects
                .iter()
                .flat_map(|s| s.locations.iter().copied())
                .collect();
            let y: Vec<f64> = data.subjects.iter().flat_map(|s| s.values.iter().copied()).collect();
            let n = y.len();
            let mut system = DMatrix::from_fn(n, n, |a, b| {
                product_kernel(spec, &locations[a * p..(a + 1) * p], &locations[b * p..(b + 1) * p])
            });
            for a in 0..n {
                system[(a, a)] += n as f64 * ridge;
            }
            let chol = system.cholesky().ok_or_else(|| {
                Error::Singular("mean system is singular; use a positive ridge parameter".into())
            })?;
            let coefficients = chol.solve(&DVector::from_vec(y));
            Ok(MeanEstimate::KernelRidge {
                spec: spec.clone(),
                p,
                locations,
                coefficients: coefficients.iter().copied().collect(),
                ridge,
            })
        }
    }
}

/// Ridge parameter minimizing held-out squared prediction error over
/// subject folds. Ties go to the larger ridge.
pub fn select_ridge(
    data: &FunctionalDataset,
    spec: &KernelSpec,
    grid: &[f64],
    folds: &FoldAssignment,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(invalid("ridge grid must be nonempty"));
    }
    let mut best = (f64::INFINITY, grid[0]);
    for &ridge in grid {
        let mut sse = 0.0;
        for f in 0..folds.folds {
            let train = data.subset(&folds.training(f));
            let mean = fit_mean(&train, spec, ridge, MeanMode::KernelRidge)?;
            for s in data.subset(&folds.validation(f)).subjects {
                for j in 0..s.len() {
                    sse += (s.values[j] - mean.eval(s.location(j, data.p))).powi(2);
                }
            }
        }
        if sse < best.0 || (sse == best.0 && ridge > best.1) {
            best = (sse, ridge);
        }
    }
    Ok(best.1)
}

/// Per-subject residual cross products `Z_i[j, j']`. The diagonal is kept in
/// storage but never enters the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProducts {
    pub z: Vec<DMatrix<f64>>,
}

pub fn cross_products(data: &FunctionalDataset, mean: &MeanEstimate) -> CrossProducts {
    let z = data
        .subjects
        .iter()
        .map(|s| {
            let r: Vec<f64> = (0..s.len())
                .map(|j| s.values[j] - mean.eval(s.location(j, data.p)))
                .collect();
            DMatrix::from_fn(s.len(), s.len(), |a, b| r[a] * r[b])
        })
        .collect();
    CrossProducts { z }
}

impl CrossProducts {
    pub fn subset(&self, indices: &[usize]) -> CrossProducts {
        CrossProducts {
            z: indices.iter().map(|&i| self.z[i].clone()).collect(),
        }
    }
}

/// Balanced seeded partition of subjects into folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub seed: u64,
    /// `fold_of[i]` is the fold of subject `i`.
    pub fold_of: Vec<usize>,
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(invalid(format!("{k} folds requested for {n} subjects")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment {
        folds: k,
        seed,
        fold_of,
    })
}

impl FoldAssignment {
    pub fn validation(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == f).collect()
    }

    pub fn training(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}
