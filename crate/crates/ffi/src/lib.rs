//! C interface to the rehab toolkit.
//!
//! Every function returns a [`RehabStatus`]; results go through out
//! pointers. On failure, [`rehab_last_error`] returns a message for the
//! calling thread. Handles are opaque and must be released with their
//! matching `_free` function. Matrices are row-major `frames x dims`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::Array2;
use rehab::assessnet::AssessModel;
use rehab::metrics::{dtw_metric, gmm_nll, scale_to_range, scaled_separation, separation_degree, GmmModel};
use rehab::scoring::{score_patient_value, score_reference_value, score_series, ScoringParams};
use rehab::{Error, ErrorKind};

/// Status code returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RehabStatus {
    Ok = 0,
    /// Invalid arguments or configuration.
    Usage = 1,
    /// Invalid or inconsistent data.
    Data = 2,
    /// Numerical failure (non-finite values, degenerate ranges).
    Numerical = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// Internal panic; the library state is unaffected.
    Panic = 5,
}

/// Scoring functions fitted to reference metric values.
pub struct RehabScoring {
    params: ScoringParams,
}

/// Gaussian mixture over per-frame feature vectors.
pub struct RehabGmm {
    model: GmmModel,
}

/// Trained assessment model loaded from a checkpoint.
pub struct RehabModel {
    model: AssessModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> RehabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RehabStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RehabStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.kind() {
                ErrorKind::Usage => RehabStatus::Usage,
                ErrorKind::Data => RehabStatus::Data,
                ErrorKind::Numerical => RehabStatus::Numerical,
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RehabStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &'static str) -> FfiResult<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `rows * cols` reads.
unsafe fn matrix(ptr: *const f64, rows: usize, cols: usize, what: &'static str) -> FfiResult<Array2<f64>> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Shape(format!("{what}: {rows} x {cols} overflows")))?;
    let data = slice(ptr, len, what)?;
    Ok(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("length checked"))
}

/// # Safety
/// `ptr` must be null or valid for a write of `T`.
unsafe fn out<'a, T>(ptr: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    ptr.as_mut().ok_or(Failure::Null(what))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rehab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rehab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Jointly rescales `x` and `y` to `[1, 20]`.
///
/// # Safety
/// Input arrays must hold `nx` and `ny` values; outputs must have room for
/// the same counts.
#[no_mangle]
pub unsafe extern "C" fn rehab_scale_to_range(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out_x: *mut f64,
    out_y: *mut f64,
) -> RehabStatus {
    guard(|| {
        let (sx, sy) = scale_to_range(slice(x, nx, "x")?, slice(y, ny, "y")?)?;
        slice_mut(out_x, nx, "out_x")?.copy_from_slice(&sx);
        slice_mut(out_y, ny, "out_y")?.copy_from_slice(&sy);
        Ok(())
    })
}

/// Mean of `(x_i - y_j) / (x_i + y_j)` over all pairs; inputs must be
/// positive.
///
/// # Safety
/// `x` and `y` must hold `nx` and `ny` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_separation_degree(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out: *mut f64,
) -> RehabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let v = separation_degree(slice(x, nx, "x")?, slice(y, ny, "y")?)?;
        *o = v;
        Ok(())
    })
}

/// Separation of patient over reference values after joint scaling.
///
/// # Safety
/// `reference` and `patient` must hold `nr` and `np` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_scaled_separation(
    reference: *const f64,
    nr: usize,
    patient: *const f64,
    np: usize,
    out: *mut f64,
) -> RehabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let v = scaled_separation(slice(reference, nr, "reference")?, slice(patient, np, "patient")?)?;
        *o = v;
        Ok(())
    })
}

/// Normalised dynamic time warping cost between two sequences with the
/// same number of dimensions.
///
/// # Safety
/// `a` and `b` must hold `na * dims` and `nb * dims` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_dtw(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dims: usize,
    out: *mut f64,
) -> RehabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let v = dtw_metric(&matrix(a, na, dims, "a")?, &matrix(b, nb, dims, "b")?)?;
        *o = v;
        Ok(())
    })
}

/// Scores reference and patient metric values in one call. Patient values
/// are paired with reference values by rank.
///
/// # Safety
/// `x` and `y` must hold `nx` and `ny` values; outputs must have room for
/// the same counts.
#[no_mangle]
pub unsafe extern "C" fn rehab_score_series(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    alpha1: f64,
    alpha2: f64,
    out_x: *mut f64,
    out_y: *mut f64,
) -> RehabStatus {
    guard(|| {
        let (sx, sy, _) = score_series(slice(x, nx, "x")?, slice(y, ny, "y")?, alpha1, alpha2)?;
        slice_mut(out_x, nx, "out_x")?.copy_from_slice(&sx);
        slice_mut(out_y, ny, "out_y")?.copy_from_slice(&sy);
        Ok(())
    })
}

/// Fits scoring statistics to `n` reference metric values.
///
/// # Safety
/// `x` must hold `n` values; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_scoring_new(
    x: *const f64,
    n: usize,
    alpha1: f64,
    alpha2: f64,
    handle: *mut *mut RehabScoring,
) -> RehabStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        let params = ScoringParams::from_reference(slice(x, n, "x")?, alpha1, alpha2)?;
        *h = Box::into_raw(Box::new(RehabScoring { params }));
        Ok(())
    })
}

/// Writes the mean and population standard deviation of the absolute
/// reference values.
///
/// # Safety
/// `handle` must come from [`rehab_scoring_new`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_scoring_stats(
    handle: *const RehabScoring,
    mu: *mut f64,
    delta: *mut f64,
) -> RehabStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        *out(mu, "mu")? = h.params.mu;
        *out(delta, "delta")? = h.params.delta;
        Ok(())
    })
}

/// Score of a reference (correct) repetition with metric value `x`.
///
/// # Safety
/// `handle` must come from [`rehab_scoring_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_score_reference(handle: *const RehabScoring, x: f64, out: *mut f64) -> RehabStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        *self::out(out, "out")? = score_reference_value(x, &h.params);
        Ok(())
    })
}

/// Score of a patient repetition with metric value `y`, corrected against
/// its paired reference value `x`.
///
/// # Safety
/// `handle` must come from [`rehab_scoring_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_score_patient(
    handle: *const RehabScoring,
    x: f64,
    y: f64,
    out: *mut f64,
) -> RehabStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        *self::out(out, "out")? = score_patient_value(x, y, &h.params);
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`rehab_scoring_new`], and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rehab_scoring_free(handle: *mut RehabScoring) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Builds a mixture of `components` Gaussians in `dims` dimensions.
/// `means` is `components x dims`; `covariances` holds one row-major
/// `dims x dims` matrix per component.
///
/// # Safety
/// Arrays must hold `components`, `components * dims` and
/// `components * dims * dims` values; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_gmm_new(
    weights: *const f64,
    means: *const f64,
    covariances: *const f64,
    components: usize,
    dims: usize,
    handle: *mut *mut RehabGmm,
) -> RehabStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        let w = slice(weights, components, "weights")?.to_vec();
        let m = matrix(means, components, dims, "means")?;
        let c = matrix(covariances, components, dims * dims, "covariances")?;
        let model = GmmModel::new(
            w,
            m.outer_iter().map(|r| r.to_vec()).collect(),
            c.outer_iter().map(|r| r.to_vec()).collect(),
        )?;
        *h = Box::into_raw(Box::new(RehabGmm { model }));
        Ok(())
    })
}

/// Negative log-likelihood of a sequence, summed over frames.
///
/// # Safety
/// `handle` must come from [`rehab_gmm_new`]; `frames` must hold
/// `n_frames * dims` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_gmm_nll(
    handle: *const RehabGmm,
    frames: *const f64,
    n_frames: usize,
    dims: usize,
    out: *mut f64,
) -> RehabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let v = gmm_nll(&h.model, &matrix(frames, n_frames, dims, "frames")?)?;
        *o = v;
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`rehab_gmm_new`], and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rehab_gmm_free(handle: *mut RehabGmm) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Loads a model checkpoint written by `rehab train`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_model_load(path: *const c_char, handle: *mut *mut RehabModel) -> RehabStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Config("path is not valid UTF-8".into()))?;
        let model = AssessModel::load(Path::new(p))?;
        *h = Box::into_raw(Box::new(RehabModel { model }));
        Ok(())
    })
}

/// Input dimensionality and expected frame count of a loaded model.
///
/// # Safety
/// `handle` must come from [`rehab_model_load`]; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_model_shape(
    handle: *const RehabModel,
    dims: *mut usize,
    frames: *mut usize,
) -> RehabStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        *out(dims, "dims")? = h.model.spec.input_dim();
        *out(frames, "frames")? = h.model.spec.canonical_t();
        Ok(())
    })
}

/// Predicted quality score for one repetition.
///
/// # Safety
/// `handle` must come from [`rehab_model_load`]; `frames` must hold
/// `n_frames * dims` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rehab_model_predict(
    handle: *const RehabModel,
    frames: *const f64,
    n_frames: usize,
    dims: usize,
    out: *mut f64,
) -> RehabStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let v = h.model.predict(&matrix(frames, n_frames, dims, "frames")?)?;
        *o = v;
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`rehab_model_load`], and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rehab_model_free(handle: *mut RehabModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
