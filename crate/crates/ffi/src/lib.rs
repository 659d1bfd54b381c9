//! C ABI for `fflqr-core`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible function returns an
//! [`FflqrStatus`]; on failure the message is available from
//! [`fflqr_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fflqr_core::error::{ErrorKind, FflqrError};
use fflqr_core::model::{fit_fflqr, fit_fpc_ls, model_from_json, model_to_json, FittedModel};
use fflqr_core::{FunctionalSample, Grid};
use nalgebra::DMatrix;

/// Result of a call across the C boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FflqrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid argument or configuration.
    InvalidArgument = 2,
    /// Malformed or inconsistent data.
    DataError = 3,
    /// Solver or factorization failure.
    NumericalError = 4,
    /// Internal error; the library state is unaffected.
    Panic = 5,
}

/// Curves evaluated on a shared grid.
pub struct FflqrSample(FunctionalSample);

/// A fitted regression model.
pub struct FflqrModel(FittedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &FflqrError) -> FflqrStatus {
    match err.kind() {
        ErrorKind::Config => FflqrStatus::InvalidArgument,
        ErrorKind::Data => FflqrStatus::DataError,
        ErrorKind::Numerical => FflqrStatus::NumericalError,
    }
}

enum Failure {
    Null(&'static str),
    Core(FflqrError),
}

impl From<FflqrError> for Failure {
    fn from(e: FflqrError) -> Self {
        Failure::Core(e)
    }
}

fn guard<F>(f: F) -> FflqrStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FflqrStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as `{what}`"));
            FflqrStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".to_string());
            FflqrStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn predictors(xs: *const *const FflqrSample, n_x: usize) -> Result<Vec<FunctionalSample>, Failure> {
    if n_x == 0 {
        return Ok(Vec::new());
    }
    if xs.is_null() {
        return Err(Failure::Null("xs"));
    }
    std::slice::from_raw_parts(xs, n_x)
        .iter()
        .map(|&p| nonnull(p, "xs[i]").map(|s| s.0.clone()))
        .collect()
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fflqr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fflqr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a sample from `n_curves × n_points` row-major values on the given grid
/// (trapezoidal quadrature weights).
///
/// # Safety
/// `values` must point to `n_curves * n_points` doubles and `grid` to
/// `n_points` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fflqr_sample_new(
    values: *const f64,
    n_curves: usize,
    grid: *const f64,
    n_points: usize,
    out: *mut *mut FflqrSample,
) -> FflqrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if values.is_null() {
            return Err(Failure::Null("values"));
        }
        if grid.is_null() {
            return Err(Failure::Null("grid"));
        }
        let pts = std::slice::from_raw_parts(grid, n_points).to_vec();
        let vals = std::slice::from_raw_parts(values, n_curves * n_points);
        let g = Grid::trapezoid(pts)?;
        let s = FunctionalSample::new(DMatrix::from_row_slice(n_curves, n_points, vals), g)?;
        *out = Box::into_raw(Box::new(FflqrSample(s)));
        Ok(())
    })
}

/// # Safety
/// `sample` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn fflqr_sample_n_curves(sample: *const FflqrSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.n_curves())
}

/// # Safety
/// `sample` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn fflqr_sample_n_points(sample: *const FflqrSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.n_points())
}

/// Copies the values in row-major order into `buf` of length `len`
/// (which must equal curves × points).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fflqr_sample_values(sample: *const FflqrSample, buf: *mut f64, len: usize) -> FflqrStatus {
    guard(|| {
        let s = &nonnull(sample, "sample")?.0;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let (n, p) = (s.n_curves(), s.n_points());
        if len != n * p {
            return Err(FflqrError::DimensionMismatch {
                context: "output buffer length",
                expected: n * p,
                found: len,
            }
            .into());
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for i in 0..n {
            for j in 0..p {
                out[i * p + j] = s.values()[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `sample` must be a handle from this library (or null) not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fflqr_sample_free(sample: *mut FflqrSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Fits the quantile model at level `tau` with truncations `k_y`, `k_x`.
///
/// # Safety
/// `y` and every entry of `xs[0..n_x]` must be valid sample handles; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fflqr_fit(
    y: *const FflqrSample,
    xs: *const *const FflqrSample,
    n_x: usize,
    tau: f64,
    k_y: usize,
    k_x: usize,
    out: *mut *mut FflqrModel,
) -> FflqrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let y = &nonnull(y, "y")?.0;
        let xs = predictors(xs, n_x)?;
        let fit = fit_fflqr(y, &xs, tau, k_y, k_x)?;
        *out = Box::into_raw(Box::new(FflqrModel(FittedModel::Fflqr(fit))));
        Ok(())
    })
}

/// Fits the least-squares FPC model with truncations `k_y`, `k_x`.
///
/// # Safety
/// As for [`fflqr_fit`].
#[no_mangle]
pub unsafe extern "C" fn fflqr_fit_ls(
    y: *const FflqrSample,
    xs: *const *const FflqrSample,
    n_x: usize,
    k_y: usize,
    k_x: usize,
    out: *mut *mut FflqrModel,
) -> FflqrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let y = &nonnull(y, "y")?.0;
        let xs = predictors(xs, n_x)?;
        let fit = fit_fpc_ls(y, &xs, k_y, k_x)?;
        *out = Box::into_raw(Box::new(FflqrModel(FittedModel::FpcLs(fit))));
        Ok(())
    })
}

/// Predicts response curves for new predictors (same order as at fit time).
///
/// # Safety
/// `model`, `xs[0..n_x]` must be valid handles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fflqr_predict(
    model: *const FflqrModel,
    xs: *const *const FflqrSample,
    n_x: usize,
    out: *mut *mut FflqrSample,
) -> FflqrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let m = &nonnull(model, "model")?.0;
        let xs = predictors(xs, n_x)?;
        let pred = m.predict(&xs)?;
        *out = Box::into_raw(Box::new(FflqrSample(pred)));
        Ok(())
    })
}

/// Serializes a model to a JSON string owned by the caller (release with
/// [`fflqr_string_free`]).
///
/// # Safety
/// `model` must be a valid handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fflqr_model_to_json(model: *const FflqrModel, out: *mut *mut c_char) -> FflqrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let m = &nonnull(model, "model")?.0;
        let text = model_to_json(m)?;
        *out = CString::new(text).expect("JSON has no interior NUL").into_raw();
        Ok(())
    })
}

/// Restores a model from JSON produced by [`fflqr_model_to_json`] or the CLI.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fflqr_model_from_json(json: *const c_char, out: *mut *mut FflqrModel) -> FflqrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| FflqrError::Config(format!("model JSON is not UTF-8: {e}")))?;
        *out = Box::into_raw(Box::new(FflqrModel(model_from_json(text)?)));
        Ok(())
    })
}

/// Response truncation of an FPC model, or 0 for other models and null.
///
/// # Safety
/// `model` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn fflqr_model_k_y(model: *const FflqrModel) -> usize {
    model.as_ref().and_then(|m| m.0.as_fpc()).map_or(0, |f| f.k_y())
}

/// Predictor truncation of an FPC model, or 0 for other models and null.
///
/// # Safety
/// `model` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn fflqr_model_k_x(model: *const FflqrModel) -> usize {
    model.as_ref().and_then(|m| m.0.as_fpc()).map_or(0, |f| f.k_x())
}

/// # Safety
/// `model` must be a handle from this library (or null) not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fflqr_model_free(model: *mut FflqrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `s` must be a string returned by this library (or null) not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fflqr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
