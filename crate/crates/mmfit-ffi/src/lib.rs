//! C ABI for the mmfit library.
//!
//! Conventions: handles are opaque pointers created and freed by this
//! library; every fallible function returns an [`MmfitStatus`] and stores a
//! human-readable message retrievable with [`mmfit_last_error_message`]
//! (per thread). Buffers are caller-allocated with lengths checked.

use mmfit::curved::{feasible_range, fit_curved_bisection, fit_curved_newton, CurvedFit};
use mmfit::inference::test_report;
use mmfit::io::parse_design_csv;
use mmfit::loglinear::FitOptions;
use mmfit::model::{validate_design, DesignMatrix};
use mmfit::numerics::Matrix;
use mmfit::{ClassifiedError, ErrorClass};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

/// Status of a C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Input text could not be parsed.
    Parse = 3,
    /// Inputs parsed but violate a model or dimension requirement.
    Validation = 4,
    /// The requested statistic lies outside the feasible set.
    Feasibility = 5,
    /// An iterative solver failed to converge.
    Convergence = 6,
    /// A size guard rejected the problem.
    SizeGuard = 7,
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let owned = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
}

fn fail<E: ClassifiedError>(e: E) -> MmfitStatus {
    set_last_error(&e.to_string());
    match e.class() {
        ErrorClass::Parse => MmfitStatus::Parse,
        ErrorClass::Validation => MmfitStatus::Validation,
        ErrorClass::Feasibility => MmfitStatus::Feasibility,
        ErrorClass::Convergence => MmfitStatus::Convergence,
        ErrorClass::SizeGuard => MmfitStatus::SizeGuard,
        ErrorClass::ExcessFailures | ErrorClass::Io | ErrorClass::Internal => {
            MmfitStatus::Internal
        }
    }
}

fn invalid(status: MmfitStatus, message: &str) -> MmfitStatus {
    set_last_error(message);
    status
}

/// Opaque handle to a validated design matrix.
pub struct MmfitDesign {
    inner: DesignMatrix,
}

/// Opaque handle to a fitted curved model.
pub struct MmfitFit {
    design: DesignMatrix,
    curved: CurvedFit,
    n: u64,
}

/// Returns the last error message on this thread as a newly allocated
/// string, or NULL if none; free with [`mmfit_string_free`].
#[no_mangle]
pub extern "C" fn mmfit_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |s| s.clone().into_raw())
    })
}

/// Frees a string returned by this library. NULL is accepted.
///
/// # Safety
/// `s` must have been returned by a function of this library and not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn mmfit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a design matrix from CSV text (rows of 0/1 entries).
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmfit_design_parse_csv(
    text: *const c_char,
    out: *mut *mut MmfitDesign,
) -> MmfitStatus {
    if text.is_null() || out.is_null() {
        return invalid(MmfitStatus::NullPointer, "null pointer argument");
    }
    *out = ptr::null_mut();
    let Ok(text) = CStr::from_ptr(text).to_str() else {
        return invalid(MmfitStatus::InvalidUtf8, "design text is not valid UTF-8");
    };
    let matrix = match parse_design_csv(text, "<memory>") {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match validate_design(&matrix) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MmfitDesign { inner }));
            MmfitStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Builds and validates a design matrix from a row-major buffer.
///
/// # Safety
/// `data` must point to `rows * cols` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmfit_design_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut MmfitDesign,
) -> MmfitStatus {
    if data.is_null() || out.is_null() {
        return invalid(MmfitStatus::NullPointer, "null pointer argument");
    }
    *out = ptr::null_mut();
    let slice = std::slice::from_raw_parts(data, rows.saturating_mul(cols));
    let matrix = match Matrix::new(rows, cols, slice.to_vec()) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match validate_design(&matrix) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MmfitDesign { inner }));
            MmfitStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of cells (rows); 0 on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_design_rows(design: *const MmfitDesign) -> usize {
    if design.is_null() {
        return 0;
    }
    unsafe { (*design).inner.rows() }
}

/// Number of parameters (columns); 0 on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_design_cols(design: *const MmfitDesign) -> usize {
    if design.is_null() {
        return 0;
    }
    unsafe { (*design).inner.cols() }
}

/// Frees a design handle. NULL is accepted.
///
/// # Safety
/// `design` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mmfit_design_free(design: *mut MmfitDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Fits the curved model to counts. `use_bisection` selects the primal
/// bisection fitter; 0 selects the outer Newton iteration.
///
/// # Safety
/// `counts` must point to `len` unsigned 64-bit integers; `design` and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_curved(
    design: *const MmfitDesign,
    counts: *const u64,
    len: usize,
    use_bisection: i32,
    out: *mut *mut MmfitFit,
) -> MmfitStatus {
    if design.is_null() || counts.is_null() || out.is_null() {
        return invalid(MmfitStatus::NullPointer, "null pointer argument");
    }
    *out = ptr::null_mut();
    let dm = &(*design).inner;
    let y = std::slice::from_raw_parts(counts, len);
    let opts = FitOptions::default();
    let result = if use_bisection != 0 {
        fit_curved_bisection(dm, y, &opts)
    } else {
        fit_curved_newton(dm, y, &opts)
    };
    match result {
        Ok(curved) => {
            *out = Box::into_raw(Box::new(MmfitFit {
                design: dm.clone(),
                curved,
                n: y.iter().sum(),
            }));
            MmfitStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Frees a fit handle. NULL is accepted.
///
/// # Safety
/// `fit` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_free(fit: *mut MmfitFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Adjustment factor of the fit; NaN on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_gamma(fit: *const MmfitFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    unsafe { (*fit).curved.gamma }
}

/// Lagrange multiplier of the normalization constraint; NaN on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_alpha(fit: *const MmfitFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    unsafe { (*fit).curved.alpha }
}

/// Log-likelihood at the fit; NaN on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_loglik(fit: *const MmfitFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    unsafe { (*fit).curved.loglik }
}

/// Number of cells in the fitted probability vector; 0 on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_cells(fit: *const MmfitFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    unsafe { (*fit).curved.pi.len() }
}

/// Number of log-linear parameters; 0 on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_params(fit: *const MmfitFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    unsafe { (*fit).curved.theta.len() }
}

/// `n` of the fitted data; 0 on NULL.
///
/// # Safety
/// The handle must be NULL or a live pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_n(fit: *const MmfitFit) -> u64 {
    if fit.is_null() {
        return 0;
    }
    unsafe { (*fit).n }
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> MmfitStatus {
    if buf.is_null() {
        return invalid(MmfitStatus::NullPointer, "null output buffer");
    }
    if len != src.len() {
        return invalid(
            MmfitStatus::Validation,
            "output buffer length does not match",
        );
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    MmfitStatus::Ok
}

/// Copies the fitted probability vector into `buf` (`len` must equal the
/// cell count).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_pi(
    fit: *const MmfitFit,
    buf: *mut f64,
    len: usize,
) -> MmfitStatus {
    if fit.is_null() {
        return invalid(MmfitStatus::NullPointer, "null fit handle");
    }
    copy_out(&(*fit).curved.pi, buf, len)
}

/// Copies the fitted log-linear parameters into `buf` (`len` must equal the
/// parameter count).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_theta(
    fit: *const MmfitFit,
    buf: *mut f64,
    len: usize,
) -> MmfitStatus {
    if fit.is_null() {
        return invalid(MmfitStatus::NullPointer, "null fit handle");
    }
    copy_out(&(*fit).curved.theta, buf, len)
}

/// Computes the feasible range of the adjustment factor for the fitted
/// statistic, writing the endpoints to `out_lower` and `out_upper`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmfit_fit_feasible_range(
    fit: *const MmfitFit,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> MmfitStatus {
    if fit.is_null() || out_lower.is_null() || out_upper.is_null() {
        return invalid(MmfitStatus::NullPointer, "null pointer argument");
    }
    let handle = &*fit;
    let s = handle.design.matrix().tr_matvec(&handle.curved.pi);
    match feasible_range(&handle.design, &s) {
        Ok(range) => {
            *out_lower = range.gamma_lower;
            *out_upper = range.gamma_upper;
            MmfitStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs the full test battery at the given confidence level and returns the
/// report as a JSON string (free with [`mmfit_string_free`]).
///
/// # Safety
/// `counts` must point to `len` unsigned 64-bit integers; `design` and
/// `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmfit_test_report_json(
    design: *const MmfitDesign,
    counts: *const u64,
    len: usize,
    level: f64,
    out_json: *mut *mut c_char,
) -> MmfitStatus {
    if design.is_null() || counts.is_null() || out_json.is_null() {
        return invalid(MmfitStatus::NullPointer, "null pointer argument");
    }
    *out_json = ptr::null_mut();
    let dm = &(*design).inner;
    let y = std::slice::from_raw_parts(counts, len);
    let report = match test_report(dm, y, level, &FitOptions::default()) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let json = match serde_json::to_string_pretty(&report) {
        Ok(j) => j,
        Err(e) => {
            return invalid(MmfitStatus::Internal, &format!("serialization failed: {e}"))
        }
    };
    match CString::new(json) {
        Ok(c) => {
            *out_json = c.into_raw();
            MmfitStatus::Ok
        }
        Err(_) => invalid(MmfitStatus::Internal, "JSON contained a NUL byte"),
    }
}
