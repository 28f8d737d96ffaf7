//! C ABI over `simexplain`.
//!
//! Every fallible function returns an [`SxStatus`]; on failure the message
//! is available from [`sx_last_error`] on the same thread. Matrices are
//! dense row-major `dim * dim` arrays. Reports and strings handed out by
//! the library must be released with [`sx_report_free`] and
//! [`sx_string_free`].
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use simexplain::analogy::{greedy_select, AnalogyConfig, ArrayTerms};
use simexplain::error::Error;
use simexplain::eval::neighborhood_config_for;
use simexplain::fit::{fit_diag, fit_full, ExplanationReport, FitConfig, MatrixStructure};
use simexplain::instance::{Instance, InstanceKind, InstancePair, Schema};
use simexplain::io::{canonical_json, explanation_json, RunConfig};
use simexplain::metric::{mahalanobis_distance, PsdMatrix};
use simexplain::oracle::DistanceOracle;
use simexplain::perturb::{build_neighborhood, default_neighborhood_size};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Oracle = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SxStructure {
    Full = 0,
    Diagonal = 1,
}

/// Black-box distance callback. Writes the distance between `left` and
/// `right` (both `dim` long) to `out` and returns 0, or returns nonzero
/// on failure. Never called concurrently.
pub type SxOracleFn = Option<
    unsafe extern "C" fn(user_data: *mut c_void, left: *const f64, right: *const f64, dim: usize, out: *mut f64) -> i32,
>;

/// Opaque fitted explanation.
pub struct SxReport {
    inner: ExplanationReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SxStatus {
    match err {
        Error::Oracle(_) => SxStatus::Oracle,
        Error::DimensionMismatch { .. } => SxStatus::DimensionMismatch,
        Error::Numerical(_) | Error::UnsupportedMetric(_) => SxStatus::Numerical,
        _ => SxStatus::InvalidArgument,
    }
}

fn fail(status: SxStatus, msg: impl Into<String>) -> SxStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SxStatus>) -> SxStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SxStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SxStatus::Panic, "internal panic"),
    }
}

fn check<T>(r: simexplain::error::Result<T>) -> Result<T, SxStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], SxStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SxStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SxStatus> {
    p.as_mut().ok_or_else(|| fail(SxStatus::NullPointer, format!("{what} is null")))
}

unsafe fn psd(matrix: *const f64, dim: usize) -> Result<PsdMatrix, SxStatus> {
    let a = slice(matrix, dim * dim, "matrix")?;
    check(PsdMatrix::new(DMatrix::from_row_slice(dim, dim, a)))
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn sx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `(x - y)^T A (x - y)` for a PSD `A`.
#[no_mangle]
pub unsafe extern "C" fn sx_mahalanobis(
    x: *const f64,
    y: *const f64,
    dim: usize,
    matrix: *const f64,
    out: *mut f64,
) -> SxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = psd(matrix, dim)?;
        *out = check(mahalanobis_distance(slice(x, dim, "x")?, slice(y, dim, "y")?, &a))?;
        Ok(())
    })
}

/// Nearest PSD matrix in Frobenius norm. `out` may alias `matrix`.
#[no_mangle]
pub unsafe extern "C" fn sx_project_psd(matrix: *const f64, dim: usize, out: *mut f64) -> SxStatus {
    guard(|| {
        let m = DMatrix::from_row_slice(dim, dim, slice(matrix, dim * dim, "matrix")?);
        let p = check(simexplain::linalg::project_psd(&m))?;
        if dim > 0 && out.is_null() {
            return Err(fail(SxStatus::NullPointer, "out is null"));
        }
        for i in 0..dim {
            for j in 0..dim {
                *out.add(i * dim + j) = p.matrix()[(i, j)];
            }
        }
        Ok(())
    })
}

struct CallbackOracle {
    f: unsafe extern "C" fn(*mut c_void, *const f64, *const f64, usize, *mut f64) -> i32,
    user_data: *mut c_void,
}

// The callback is only ever invoked from the calling thread's fit, and
// `concurrent_safe` keeps the library from fanning out.
unsafe impl Send for CallbackOracle {}
unsafe impl Sync for CallbackOracle {}

impl DistanceOracle for CallbackOracle {
    fn distance(&self, left: &Instance, right: &Instance) -> simexplain::error::Result<f64> {
        let (l, r) = match (left.as_numeric(), right.as_numeric()) {
            (Some(l), Some(r)) if l.len() == r.len() => (l, r),
            _ => return Err(Error::Oracle("callback oracle expects numeric instances of equal length".into())),
        };
        let mut d = f64::NAN;
        let code = unsafe { (self.f)(self.user_data, l.as_ptr(), r.as_ptr(), l.len(), &mut d) };
        if code != 0 {
            return Err(Error::Oracle(format!("callback returned {code}")));
        }
        Ok(d)
    }

    fn concurrent_safe(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        "callback".into()
    }
}

/// Fits a local Mahalanobis surrogate around the numeric pair `(x, y)`.
///
/// `reference` holds `n_reference` rows of `dim` values used to estimate
/// perturbation scales; with `n_reference == 0` the pair itself is used.
/// `neighborhood_size == 0` selects the default size. On success `*out`
/// owns a new report.
#[no_mangle]
pub unsafe extern "C" fn sx_fit_numeric(
    x: *const f64,
    y: *const f64,
    dim: usize,
    reference: *const f64,
    n_reference: usize,
    neighborhood_size: usize,
    seed: u64,
    structure: SxStructure,
    oracle: SxOracleFn,
    user_data: *mut c_void,
    out: *mut *mut SxReport,
) -> SxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let f = oracle.ok_or_else(|| fail(SxStatus::NullPointer, "oracle is null"))?;
        if dim == 0 {
            return Err(fail(SxStatus::InvalidArgument, "dim must be >= 1"));
        }
        let pair = check(InstancePair::new(
            Instance::Numeric(slice(x, dim, "x")?.to_vec()),
            Instance::Numeric(slice(y, dim, "y")?.to_vec()),
        ))?;
        let mut data = vec![pair.clone()];
        let rows = slice(reference, n_reference * dim, "reference")?;
        data.extend(rows.chunks(dim).map(|r| InstancePair {
            left: Instance::Numeric(r.to_vec()),
            right: Instance::Numeric(r.to_vec()),
        }));
        let nb_cfg = check(neighborhood_config_for(&Schema::numeric(dim), &data, 0.0, None))?;
        let size = match neighborhood_size {
            0 => default_neighborhood_size(InstanceKind::Numeric),
            n => n,
        };
        let nb = check(build_neighborhood(&pair, size, &nb_cfg, seed, None))?;
        let oracle = CallbackOracle { f, user_data };
        let report = match structure {
            SxStructure::Full => check(fit_full(&nb, &oracle, &FitConfig::default()))?,
            SxStructure::Diagonal => {
                let cfg = FitConfig {
                    structure: MatrixStructure::Diagonal,
                    ..FitConfig::default()
                };
                check(fit_diag(&nb, &oracle, &cfg))?
            }
        };
        *out = Box::into_raw(Box::new(SxReport { inner: report }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sx_report_free(report: *mut SxReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of interpretable features, or 0 for a null report.
#[no_mangle]
pub unsafe extern "C" fn sx_report_dim(report: *const SxReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.matrix.dim())
}

/// Copies the fitted matrix into `out` (`dim * dim`, row-major).
#[no_mangle]
pub unsafe extern "C" fn sx_report_matrix(report: *const SxReport, out: *mut f64, len: usize) -> SxStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| fail(SxStatus::NullPointer, "report is null"))?;
        let m = r.inner.matrix.matrix();
        let d = m.nrows();
        if len != d * d {
            return Err(fail(SxStatus::DimensionMismatch, format!("expected {} values, got {len}", d * d)));
        }
        if len > 0 && out.is_null() {
            return Err(fail(SxStatus::NullPointer, "out is null"));
        }
        for i in 0..d {
            for j in 0..d {
                *out.add(i * d + j) = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Surrogate and black-box distance of the explained pair.
#[no_mangle]
pub unsafe extern "C" fn sx_report_distances(
    report: *const SxReport,
    predicted: *mut f64,
    black_box: *mut f64,
) -> SxStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| fail(SxStatus::NullPointer, "report is null"))?;
        let e = r
            .inner
            .explained
            .as_ref()
            .ok_or_else(|| fail(SxStatus::InvalidArgument, "report has no explained pair"))?;
        *out_ptr(predicted, "predicted")? = e.predicted_distance;
        *out_ptr(black_box, "black_box")? = e.bb_distance;
        Ok(())
    })
}

/// 1 if the solver converged, 0 if not or for a null report.
#[no_mangle]
pub unsafe extern "C" fn sx_report_converged(report: *const SxReport) -> i32 {
    report.as_ref().map_or(0, |r| i32::from(r.inner.diagnostics.converged))
}

/// Canonical JSON for the report. Free the string with [`sx_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sx_report_to_json(report: *const SxReport, out: *mut *mut c_char) -> SxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let r = report.as_ref().ok_or_else(|| fail(SxStatus::NullPointer, "report is null"))?;
        let run = RunConfig::new("ffi", r.inner.seed.unwrap_or(0));
        let text = check(explanation_json(&r.inner, &run, None).and_then(|v| canonical_json(&v)))?;
        *out = CString::new(text)
            .map_err(|_| fail(SxStatus::Numerical, "report JSON contains NUL"))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Greedy analogy selection over `n` precomputed candidates.
///
/// `bb` holds the candidates' black-box distances and `bb_x` the explained
/// pair's; `closeness` holds `G` per candidate; `delta_min` is the `n * n`
/// row-major pairwise diversity distance. Writes `k` indices in selection
/// order to `out_indices` and the objective to `out_objective` (may be
/// null).
#[no_mangle]
pub unsafe extern "C" fn sx_greedy_select(
    n: usize,
    bb: *const f64,
    bb_x: f64,
    closeness: *const f64,
    delta_min: *const f64,
    k: usize,
    lambda1: f64,
    lambda2: f64,
    out_indices: *mut usize,
    out_objective: *mut f64,
) -> SxStatus {
    guard(|| {
        let terms = check(ArrayTerms::from_distances(
            slice(bb, n, "bb")?.to_vec(),
            bb_x,
            slice(closeness, n, "closeness")?.to_vec(),
            slice(delta_min, n * n, "delta_min")?.to_vec(),
        ))?;
        let cfg = AnalogyConfig {
            lambda1,
            lambda2,
            ..AnalogyConfig::for_kind(InstanceKind::Numeric, k)
        };
        let set = check(greedy_select(&terms, &cfg))?;
        if k > 0 && out_indices.is_null() {
            return Err(fail(SxStatus::NullPointer, "out_indices is null"));
        }
        for (i, idx) in set.indices().into_iter().enumerate() {
            *out_indices.add(i) = idx;
        }
        if let Some(o) = out_objective.as_mut() {
            *o = set.objective;
        }
        Ok(())
    })
}
