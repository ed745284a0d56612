//! C ABI over the `mcov` estimator.
//!
//! Every function returns an `int32_t` status, `MCOV_OK` on success. On
//! failure `mcov_last_error_message` describes the error for the calling
//! thread. Objects are opaque handles owned by the caller and released
//! with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use mcov::cli::{centered, RunConfig};
use mcov::dataset::{load_csv, FunctionalDataset, Subject};
use mcov::sim::{generate, SimSetting};
use mcov::solver::{fit_precomputed, precompute, CovarianceFit, GramSet};
use mcov::spectral::{evaluate_cov, l2_eigensystem, L2EigenSystem};
use mcov::Error;

pub const MCOV_OK: i32 = 0;
pub const MCOV_ERR_NULL: i32 = 1;
pub const MCOV_ERR_INVALID: i32 = 2;
pub const MCOV_ERR_PARSE: i32 = 3;
pub const MCOV_ERR_IO: i32 = 4;
pub const MCOV_ERR_NUMERICAL: i32 = 5;
pub const MCOV_ERR_PROVENANCE: i32 = 6;
/// The solver hit its iteration cap; the fit handle is still returned.
pub const MCOV_NOT_CONVERGED: i32 = 7;
pub const MCOV_ERR_BUFFER: i32 = 8;
pub const MCOV_ERR_PANIC: i32 = 9;

/// Observed curves.
pub struct McovDataset {
    data: FunctionalDataset,
}

/// A fitted covariance surface.
pub struct McovFit {
    fit: CovarianceFit,
}

/// L2 eigen-decomposition of a fit.
pub struct McovEigen {
    eig: L2EigenSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::Json(_) => MCOV_ERR_PARSE,
            Error::Io(_) => MCOV_ERR_IO,
            Error::Singular(_) | Error::NotPsd(_) | Error::Diverged { .. } => MCOV_ERR_NUMERICAL,
            Error::Provenance(_) | Error::Container(_) => MCOV_ERR_PROVENANCE,
            _ => MCOV_ERR_INVALID,
        };
        Fail(code, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<i32, Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(code)) => code,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MCOV_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MCOV_ERR_NULL, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(MCOV_ERR_INVALID, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn fill(buf: *mut f64, len: usize, src: &[f64]) -> Result<i32, Fail> {
    if len < src.len() {
        return Err(Fail(MCOV_ERR_BUFFER, format!("buffer holds {len} values, {} needed", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buffer"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(MCOV_OK)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcov_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mcov_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a `subject,t1..tp,y` CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_ds` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mcov_dataset_load_csv(path: *const c_char, out_ds: *mut *mut McovDataset) -> i32 {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        let slot = out(out_ds, "out")?;
        let loaded = load_csv(&path)?;
        *slot = boxed(McovDataset { data: loaded.data });
        Ok(MCOV_OK)
    })
}

/// Builds a dataset from `count` observations. Observation `j` belongs to
/// subject `subjects[j]`, sits at `locations[j*p .. j*p+p]` and has value
/// `values[j]`. Subjects keep their order of first appearance.
///
/// # Safety
/// The arrays must hold `count`, `count * p` and `count` elements.
#[no_mangle]
pub unsafe extern "C" fn mcov_dataset_from_arrays(
    p: usize,
    count: usize,
    subjects: *const u64,
    locations: *const f64,
    values: *const f64,
    out_ds: *mut *mut McovDataset,
) -> i32 {
    guard(|| {
        let slot = out(out_ds, "out")?;
        if count > 0 && subjects.is_null() {
            return Err(null("subjects"));
        }
        let ids = if count == 0 { &[][..] } else { std::slice::from_raw_parts(subjects, count) };
        let locs = slice(locations, count * p, "locations")?;
        let vals = slice(values, count, "values")?;
        let mut order: Vec<u64> = Vec::new();
        let mut groups: Vec<Subject> = Vec::new();
        for j in 0..count {
            let g = match order.iter().position(|&s| s == ids[j]) {
                Some(g) => g,
                None => {
                    order.push(ids[j]);
                    groups.push(Subject { id: ids[j].to_string(), locations: Vec::new(), values: Vec::new() });
                    groups.len() - 1
                }
            };
            groups[g].locations.extend_from_slice(&locs[j * p..(j + 1) * p]);
            groups[g].values.push(vals[j]);
        }
        let data = FunctionalDataset::new(p, groups)?;
        *slot = boxed(McovDataset { data });
        Ok(MCOV_OK)
    })
}

/// Draws a dataset from simulation setting 1, 2 or 3.
///
/// # Safety
/// `out_ds` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mcov_dataset_simulate(
    setting: u8,
    n: usize,
    m: usize,
    sigma: f64,
    seed: u64,
    out_ds: *mut *mut McovDataset,
) -> i32 {
    guard(|| {
        let slot = out(out_ds, "out")?;
        let data = generate(&SimSetting::new(setting, n, m, sigma, seed)?)?;
        *slot = boxed(McovDataset { data });
        Ok(MCOV_OK)
    })
}

/// Number of subjects and the domain dimension.
///
/// # Safety
/// `ds` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcov_dataset_shape(ds: *const McovDataset, n: *mut usize, p: *mut usize) -> i32 {
    guard(|| {
        let ds = borrow(ds, "dataset")?;
        *out(n, "n")? = ds.data.n();
        *out(p, "p")? = ds.data.p;
        Ok(MCOV_OK)
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcov_dataset_free(ds: *mut McovDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits the covariance of `ds`. `config_json` is a run configuration in
/// the CLI's JSON format, or NULL for the defaults. Returns
/// `MCOV_NOT_CONVERGED` with a valid handle when the iteration cap was hit.
///
/// # Safety
/// `ds` must be a live handle, `config_json` NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit(
    ds: *const McovDataset,
    config_json: *const c_char,
    out_fit: *mut *mut McovFit,
) -> i32 {
    guard(|| {
        let ds = borrow(ds, "dataset")?;
        let slot = out(out_fit, "out")?;
        let config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(&string(config_json, "config")?).map_err(Error::from)?
        };
        config.kernel.validate()?;
        config.fit.validate()?;
        let cross = centered(&config, &ds.data)?;
        let grams = Arc::new(GramSet::build(&ds.data, &config.kernel, &config.grams)?);
        let pre = precompute(&ds.data, &cross, grams)?;
        let (fit, _) = fit_precomputed(&pre, &config.fit, None)?;
        let converged = fit.diagnostics.converged;
        *slot = boxed(McovFit { fit });
        if converged {
            Ok(MCOV_OK)
        } else {
            set_error("stopped at the iteration cap".into());
            Ok(MCOV_NOT_CONVERGED)
        }
    })
}

/// Evaluates the fitted covariance at the pair of `p`-vectors `s`, `t`.
///
/// # Safety
/// `s` and `t` must hold `p` values each.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_evaluate(
    fit: *const McovFit,
    s: *const f64,
    t: *const f64,
    p: usize,
    value: *mut f64,
) -> i32 {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        let (s, t) = (slice(s, p, "s")?, slice(t, p, "t")?);
        *out(value, "value")? = evaluate_cov(&fit.fit, s, t)?;
        Ok(MCOV_OK)
    })
}

/// Number of coefficients, the product of the tensor extents.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_coefficient_count(fit: *const McovFit, count: *mut usize) -> i32 {
    guard(|| {
        *out(count, "count")? = borrow(fit, "fit")?.fit.coeffs.data().len();
        Ok(MCOV_OK)
    })
}

/// Copies the coefficient tensor, last index fastest.
///
/// # Safety
/// `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_coefficients(fit: *const McovFit, buf: *mut f64, len: usize) -> i32 {
    guard(|| fill(buf, len, borrow(fit, "fit")?.fit.coeffs.data()))
}

/// Iterations run and whether the tolerance was met.
///
/// # Safety
/// `fit` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_diagnostics(
    fit: *const McovFit,
    iterations: *mut usize,
    converged: *mut bool,
    objective: *mut f64,
) -> i32 {
    guard(|| {
        let d = &borrow(fit, "fit")?.fit.diagnostics;
        *out(iterations, "iterations")? = d.iterations;
        *out(converged, "converged")? = d.converged;
        *out(objective, "objective")? = d.final_objective;
        Ok(MCOV_OK)
    })
}

/// Writes the binary container and its JSON sidecar.
///
/// # Safety
/// Paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_save(fit: *const McovFit, container: *const c_char, sidecar: *const c_char) -> i32 {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        let c = PathBuf::from(string(container, "container")?);
        let s = PathBuf::from(string(sidecar, "sidecar")?);
        mcov::container::save_fit(&fit.fit, &c, &s)?;
        Ok(MCOV_OK)
    })
}

/// Reloads a saved fit against the dataset it was made from.
///
/// # Safety
/// Paths must be NUL-terminated and `ds` a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_load(
    container: *const c_char,
    sidecar: *const c_char,
    ds: *const McovDataset,
    out_fit: *mut *mut McovFit,
) -> i32 {
    guard(|| {
        let c = PathBuf::from(string(container, "container")?);
        let s = PathBuf::from(string(sidecar, "sidecar")?);
        let ds = borrow(ds, "dataset")?;
        let slot = out(out_fit, "out")?;
        let fit = mcov::container::load_fit(&c, &s, &ds.data)?;
        *slot = boxed(McovFit { fit });
        Ok(MCOV_OK)
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcov_fit_free(fit: *mut McovFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcov_eigen(fit: *const McovFit, out_eig: *mut *mut McovEigen) -> i32 {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        let slot = out(out_eig, "out")?;
        *slot = boxed(McovEigen { eig: l2_eigensystem(&fit.fit)? });
        Ok(MCOV_OK)
    })
}

/// # Safety
/// `eig` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcov_eigen_count(eig: *const McovEigen, count: *mut usize) -> i32 {
    guard(|| {
        *out(count, "count")? = borrow(eig, "eigen")?.eig.len();
        Ok(MCOV_OK)
    })
}

/// Copies the eigenvalues, descending.
///
/// # Safety
/// `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn mcov_eigen_values(eig: *const McovEigen, buf: *mut f64, len: usize) -> i32 {
    guard(|| fill(buf, len, &borrow(eig, "eigen")?.eig.eigenvalues))
}

/// Evaluates every eigenfunction at the `p`-vector `x`.
///
/// # Safety
/// `x` must hold `p` values and `buf` `len` values.
#[no_mangle]
pub unsafe extern "C" fn mcov_eigen_functions_at(
    eig: *const McovEigen,
    x: *const f64,
    p: usize,
    buf: *mut f64,
    len: usize,
) -> i32 {
    guard(|| {
        let eig = borrow(eig, "eigen")?;
        let v = eig.eig.eigenfunctions_at(slice(x, p, "x")?)?;
        fill(buf, len, v.as_slice())
    })
}

/// # Safety
/// `eig` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcov_eigen_free(eig: *mut McovEigen) {
    if !eig.is_null() {
        drop(Box::from_raw(eig));
    }
}
