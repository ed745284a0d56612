//! Binary coefficient container and its provenance sidecar.
//!
//! Layout of an `MCOV1` file, all integers and floats little-endian:
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 5            | magic `MCOV1`                             |
//! | 4            | `u32` tensor order `d`                    |
//! | 8 `d`        | `u64` extents                             |
//! | 8 `prod`     | `f64` entries, last index fastest         |
//!
//! The JSON sidecar records the kernel, Gram options, retained ranks and a
//! SHA-256 of every dimension's pooled coordinates, so the evaluation basis
//! can be rebuilt from the dataset and checked before use.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::kernel::{GramOptions, KernelSpec};
use crate::solver::{CovarianceFit, FitConfig, FitDiagnostics, GramSet};
use crate::tensor::DenseTensor;

pub const MAGIC: &[u8; 5] = b"MCOV1";

pub fn encode(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 8 * t.order() + 8 * t.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.order() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DenseTensor> {
    let bad = |m: &str| Error::Container(m.to_string());
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(bad("missing MCOV1 magic"));
    }
    let order = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header = 9 + 8 * order;
    if bytes.len() < header {
        return Err(bad("truncated shape header"));
    }
    let dims: Vec<usize> = (0..order)
        .map(|i| u64::from_le_bytes(bytes[9 + 8 * i..17 + 8 * i].try_into().expect("8 bytes")) as usize)
        .collect();
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflows"))?;
    if bytes.len() != header + 8 * count {
        return Err(bad(&format!(
            "expected {} data bytes, found {}",
            8 * count,
            bytes.len() - header
        )));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseTensor::from_vec(dims, data).map_err(|e| Error::Container(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn locations_hash(coords: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in coords {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub container_sha256: String,
    pub kernel: KernelSpec,
    pub gram_options: GramOptions,
    pub ranks: Vec<usize>,
    pub observations: usize,
    pub pooled_location_sha256: Vec<String>,
    pub fit_config: FitConfig,
    pub diagnostics: FitDiagnostics,
}

impl Sidecar {
    pub fn describe(fit: &CovarianceFit, container_sha256: String) -> Self {
        Sidecar {
            format: "MCOV1".into(),
            container_sha256,
            kernel: fit.grams.spec().clone(),
            gram_options: fit.grams.options.clone(),
            ranks: fit.grams.ranks(),
            observations: fit.grams.factors[0].len(),
            pooled_location_sha256: fit
                .grams
                .factors
                .iter()
                .map(|f| locations_hash(&f.locations))
                .collect(),
            fit_config: fit.config.clone(),
            diagnostics: fit.diagnostics.clone(),
        }
    }
}

/// Writes the container and sidecar; returns the sidecar.
pub fn save_fit(fit: &CovarianceFit, container: &Path, sidecar: &Path) -> Result<Sidecar> {
    let bytes = encode(&fit.coeffs);
    std::fs::write(container, &bytes)?;
    let meta = Sidecar::describe(fit, sha256_hex(&bytes));
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

/// Reads a saved fit, rebuilding its Gram factors from `data` and refusing
/// any mismatch with the recorded provenance.
pub fn load_fit(container: &Path, sidecar: &Path, data: &FunctionalDataset) -> Result<CovarianceFit> {
    let bytes = std::fs::read(container)?;
    let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
    if meta.format != "MCOV1" {
        return Err(Error::Provenance(format!("unknown format {:?}", meta.format)));
    }
    let digest = sha256_hex(&bytes);
    if digest != meta.container_sha256 {
        return Err(Error::Provenance(format!(
            "container hash {digest} does not match sidecar {}",
            meta.container_sha256
        )));
    }
    let coeffs = decode(&bytes)?;
    let grams = GramSet::build(data, &meta.kernel, &meta.gram_options)?;
    if grams.p() != meta.pooled_location_sha256.len() {
        return Err(Error::Provenance(format!(
            "dataset has p={}, fit was made with p={}",
            grams.p(),
            meta.pooled_location_sha256.len()
        )));
    }
    for (k, f) in grams.factors.iter().enumerate() {
        if locations_hash(&f.locations) != meta.pooled_location_sha256[k] {
            return Err(Error::Provenance(format!(
                "pooled locations of dimension {k} differ from the fitted data"
            )));
        }
    }
    if grams.ranks() != meta.ranks {
        return Err(Error::Provenance(format!(
            "rebuilt ranks {:?} differ from recorded {:?}",
            grams.ranks(),
            meta.ranks
        )));
    }
    if coeffs.shape() != &grams.coeff_shape() {
        return Err(Error::Provenance("coefficient shape does not match the rebuilt basis".into()));
    }
    Ok(CovarianceFit {
        coeffs,
        config: meta.fit_config,
        grams: Arc::new(grams),
        diagnostics: meta.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let t = DenseTensor::from_vec(vec![2, 3, 2, 3], (0..36).map(|x| (x as f64).sin() / 7.0).collect())
            .unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..5], b"MCOV1");
        assert_eq!(bytes.len(), 9 + 32 + 8 * 36);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn corrupt_containers_rejected() {
        let t = DenseTensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong).is_err());
        assert!(decode(&bytes[..7]).is_err());
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_ne!(locations_hash(&[0.1, 0.2]), locations_hash(&[0.2, 0.1]));
    }
}
