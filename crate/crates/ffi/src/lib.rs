//! C ABI over the MNAR debiased-estimation toolkit.
//!
//! Conventions:
//! - matrices and masks are opaque handles created/freed through this API;
//! - every fallible call returns an [`MnarStatus`] and writes results
//!   through out-pointers, which are untouched on failure;
//! - the last error message is thread-local, fetched with
//!   [`mnar_last_error_message`];
//! - input buffers are row-major and never retained past the call.
//!
//! The `include/mnar.h` header is generated from this file at build time.

use std::cell::RefCell;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use mnar_core::analytics::{
    closed_form_bias, closed_form_variance, h_b, h_v, tail_bound, AnalyticsOptions,
    ClosedFormInputs,
};
use mnar_core::dynamic::{alpha_opt_closed_form, variance_cap, JointObjective};
use mnar_core::estimators::{EstimatorFamily, EstimatorSpec};
use mnar_core::matrix::{LabeledMatrix, ObservationMask};
use mnar_core::shaping::ShapingFunction;
use mnar_core::simulation::monte_carlo;
use mnar_core::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnarStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments were structurally invalid (missing pieces, bad counts).
    InvalidArgument = 2,
    /// A numeric argument was outside its domain.
    DomainError = 3,
    /// Matrix/mask shapes disagree.
    ShapeMismatch = 4,
    /// The operation is not defined for these inputs.
    Unsupported = 5,
    /// A computation produced a non-finite value.
    NumericError = 6,
    /// Unexpected internal failure.
    Internal = 7,
}

/// Estimator families exposed through the C ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnarFamily {
    Real = 0,
    Naive = 1,
    Eib = 2,
    Ips = 3,
    Snips = 4,
    Dr = 5,
    DIps = 6,
    DDr = 7,
    DSnips = 8,
}

impl From<MnarFamily> for EstimatorFamily {
    fn from(f: MnarFamily) -> Self {
        match f {
            MnarFamily::Real => EstimatorFamily::Real,
            MnarFamily::Naive => EstimatorFamily::Naive,
            MnarFamily::Eib => EstimatorFamily::Eib,
            MnarFamily::Ips => EstimatorFamily::Ips,
            MnarFamily::Snips => EstimatorFamily::Snips,
            MnarFamily::Dr => EstimatorFamily::Dr,
            MnarFamily::DIps => EstimatorFamily::DIps,
            MnarFamily::DDr => EstimatorFamily::DDr,
            MnarFamily::DSnips => EstimatorFamily::DSnips,
        }
    }
}

/// Built-in shaping functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnarShaping {
    Identity = 0,
    Sine = 1,
    Log1p = 2,
    Tanh = 3,
}

impl From<MnarShaping> for ShapingFunction {
    fn from(s: MnarShaping) -> Self {
        match s {
            MnarShaping::Identity => ShapingFunction::identity(),
            MnarShaping::Sine => ShapingFunction::sine(),
            MnarShaping::Log1p => ShapingFunction::log1p(),
            MnarShaping::Tanh => ShapingFunction::tanh(),
        }
    }
}

/// Opaque dense matrix handle.
pub struct MnarMatrix(LabeledMatrix);

/// Opaque observation-mask handle.
pub struct MnarMask(ObservationMask);

/// Monte Carlo summary written by [`mnar_monte_carlo`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MnarMonteCarloSummary {
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub empirical_bias: f64,
    pub standard_error: f64,
    pub replicas: u64,
    pub resampled_empty: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|slot| {
        let mut bytes = message.into_bytes();
        bytes.push(0);
        *slot.borrow_mut() = bytes;
    });
}

fn status_of(err: &Error) -> MnarStatus {
    match err {
        Error::ShapeMismatch { .. } => MnarStatus::ShapeMismatch,
        Error::Domain { .. } => MnarStatus::DomainError,
        Error::NonFinite { .. } => MnarStatus::NumericError,
        Error::UnsupportedMetric(_) => MnarStatus::Unsupported,
        Error::EmptyMatrix
        | Error::EmptyObservation
        | Error::TooFewSamples { .. }
        | Error::InvalidSpec(_)
        | Error::InvalidConfig(_)
        | Error::UndefinedMetric(_) => MnarStatus::InvalidArgument,
        _ => MnarStatus::Internal,
    }
}

fn fail(err: Error) -> MnarStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null_argument(what: &str) -> MnarStatus {
    set_error(format!("null argument: {what}"));
    MnarStatus::NullArgument
}

/// Runs a body, converting panics into `Internal` instead of unwinding
/// across the C boundary.
fn guarded(body: impl FnOnce() -> MnarStatus) -> MnarStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            MnarStatus::Internal
        }
    }
}

/// Copies the last error message (NUL-terminated) into `buf` and returns
/// the full message length in bytes without the terminator. A null or
/// too-small buffer still gets a best-effort truncated copy.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mnar_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let bytes = slot.borrow();
        let msg_len = bytes.len().saturating_sub(1);
        if !buf.is_null() && len > 0 {
            let copy = msg_len.min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), copy);
                *buf.add(copy) = 0;
            }
        }
        msg_len
    })
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

fn write_out<T>(out: *mut T, value: T) -> MnarStatus {
    if out.is_null() {
        return null_argument("out");
    }
    unsafe {
        *out = value;
    }
    MnarStatus::Ok
}

/// Creates a dense matrix from a row-major buffer of `rows * cols` values.
///
/// # Safety
/// `values` must point to at least `rows * cols` doubles; `out` must be a
/// valid pointer. The buffer is copied, not retained.
#[no_mangle]
pub unsafe extern "C" fn mnar_matrix_new(
    rows: usize,
    cols: usize,
    values: *const f64,
    out: *mut *mut MnarMatrix,
) -> MnarStatus {
    guarded(|| {
        if out.is_null() {
            return null_argument("out");
        }
        let Some(values) = (unsafe { slice_arg(values, rows.saturating_mul(cols)) }) else {
            return null_argument("values");
        };
        match LabeledMatrix::new(rows, cols, values.to_vec()) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(MnarMatrix(m))) };
                MnarStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Creates a propensity matrix; every cell must lie in (0, 1].
///
/// # Safety
/// Same contract as [`mnar_matrix_new`].
#[no_mangle]
pub unsafe extern "C" fn mnar_propensity_matrix_new(
    rows: usize,
    cols: usize,
    values: *const f64,
    out: *mut *mut MnarMatrix,
) -> MnarStatus {
    guarded(|| {
        if out.is_null() {
            return null_argument("out");
        }
        let Some(values) = (unsafe { slice_arg(values, rows.saturating_mul(cols)) }) else {
            return null_argument("values");
        };
        match LabeledMatrix::new_propensity(rows, cols, values.to_vec()) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(MnarMatrix(m))) };
                MnarStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a matrix handle; null is a no-op.
///
/// # Safety
/// `matrix` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn mnar_matrix_free(matrix: *mut MnarMatrix) {
    if !matrix.is_null() {
        drop(unsafe { Box::from_raw(matrix) });
    }
}

/// Creates an observation mask from a row-major buffer of 0/1 bytes.
///
/// # Safety
/// `bits` must point to at least `rows * cols` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mnar_mask_new(
    rows: usize,
    cols: usize,
    bits: *const u8,
    out: *mut *mut MnarMask,
) -> MnarStatus {
    guarded(|| {
        if out.is_null() {
            return null_argument("out");
        }
        let Some(bits) = (unsafe { slice_arg(bits, rows.saturating_mul(cols)) }) else {
            return null_argument("bits");
        };
        match ObservationMask::new(rows, cols, bits.to_vec()) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(MnarMask(m))) };
                MnarStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a mask handle; null is a no-op.
///
/// # Safety
/// `mask` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn mnar_mask_free(mask: *mut MnarMask) {
    if !mask.is_null() {
        drop(unsafe { Box::from_raw(mask) });
    }
}

/// Number of observed cells in a mask.
///
/// # Safety
/// `mask` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn mnar_mask_observed_count(
    mask: *const MnarMask,
    out: *mut usize,
) -> MnarStatus {
    guarded(|| {
        let Some(mask) = (unsafe { mask.as_ref() }) else {
            return null_argument("mask");
        };
        write_out(out, mask.0.observed_count())
    })
}

/// f(p̂) for a built-in shaping function.
#[no_mangle]
pub extern "C" fn mnar_shaping_eval(shaping: MnarShaping, p_hat: f64, out: *mut f64) -> MnarStatus {
    guarded(|| match ShapingFunction::from(shaping).eval(p_hat) {
        Ok(v) => write_out(out, v),
        Err(e) => fail(e),
    })
}

/// f^α(p̂) for a built-in shaping function, α ∈ [0, 1].
#[no_mangle]
pub extern "C" fn mnar_shaping_eval_alpha(
    shaping: MnarShaping,
    p_hat: f64,
    alpha: f64,
    out: *mut f64,
) -> MnarStatus {
    guarded(
        || match ShapingFunction::from(shaping).eval_alpha(p_hat, alpha) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        },
    )
}

/// Per-cell bias factor h_B(p̂, p, α) = 1 − p/f^α(p̂).
#[no_mangle]
pub extern "C" fn mnar_h_bias(
    shaping: MnarShaping,
    p_hat: f64,
    p_true: f64,
    alpha: f64,
    out: *mut f64,
) -> MnarStatus {
    guarded(
        || match h_b(&ShapingFunction::from(shaping), p_hat, p_true, alpha) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        },
    )
}

/// Per-cell variance factor h_V(p̂, p, α) = p(1−p)/f^{2α}(p̂).
#[no_mangle]
pub extern "C" fn mnar_h_variance(
    shaping: MnarShaping,
    p_hat: f64,
    p_true: f64,
    alpha: f64,
    out: *mut f64,
) -> MnarStatus {
    guarded(
        || match h_v(&ShapingFunction::from(shaping), p_hat, p_true, alpha) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        },
    )
}

/// Closed-form optimal exponent α for one cell under accurate propensities
/// and identity penalty metrics.
#[no_mangle]
pub extern "C" fn mnar_alpha_opt(
    w1: f64,
    w2: f64,
    shaping: MnarShaping,
    p: f64,
    out: *mut f64,
) -> MnarStatus {
    guarded(|| {
        let objective = match JointObjective::identity(w1, w2) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        match alpha_opt_closed_form(&objective, &ShapingFunction::from(shaping), p) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        }
    })
}

/// Uniform cap on h_V at the per-cell optimum: w1/w2 + 0.25 for identity
/// metrics.
#[no_mangle]
pub extern "C" fn mnar_variance_cap(w1: f64, w2: f64, out: *mut f64) -> MnarStatus {
    guarded(|| {
        let objective = match JointObjective::identity(w1, w2) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        match variance_cap(&objective) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        }
    })
}

unsafe fn build_spec(
    family: MnarFamily,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
) -> Result<EstimatorSpec, MnarStatus> {
    let family_core = EstimatorFamily::from(family);
    let mut spec = EstimatorSpec::new(family_core);
    if family_core.is_dynamic() {
        let Some(alpha) = (unsafe { alpha.as_ref() }) else {
            return Err(null_argument("alpha (required for dynamic families)"));
        };
        spec = spec
            .with_shaping(ShapingFunction::from(shaping))
            .with_alpha(alpha.0.clone());
    }
    Ok(spec)
}

/// Evaluates an estimator on one realized mask.
///
/// `imputed_errors` is required for EIB/DR/D-DR; `propensities` for the
/// IPS/DR families; `alpha` for the dynamic families (with `shaping`).
/// Unused arguments may be null.
///
/// # Safety
/// All non-null handles must be live handles from this library; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mnar_estimate(
    family: MnarFamily,
    errors: *const MnarMatrix,
    imputed_errors: *const MnarMatrix,
    propensities: *const MnarMatrix,
    mask: *const MnarMask,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
    out: *mut f64,
) -> MnarStatus {
    guarded(|| {
        let Some(errors) = (unsafe { errors.as_ref() }) else {
            return null_argument("errors");
        };
        let Some(mask) = (unsafe { mask.as_ref() }) else {
            return null_argument("mask");
        };
        let spec = match unsafe { build_spec(family, shaping, alpha) } {
            Ok(v) => v,
            Err(status) => return status,
        };
        let e_hat = unsafe { imputed_errors.as_ref() }.map(|m| &m.0);
        let p_hat = unsafe { propensities.as_ref() }.map(|m| &m.0);
        match spec.evaluate(&errors.0, e_hat, p_hat, &mask.0) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        }
    })
}

#[allow(clippy::too_many_arguments)]
unsafe fn closed_form_call(
    family: MnarFamily,
    errors: *const MnarMatrix,
    imputed_errors: *const MnarMatrix,
    p_true: *const MnarMatrix,
    p_hat: *const MnarMatrix,
    observed_count: f64,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
    out: *mut f64,
    which: fn(EstimatorFamily, &ClosedFormInputs, &AnalyticsOptions) -> mnar_core::Result<f64>,
) -> MnarStatus {
    let Some(errors) = (unsafe { errors.as_ref() }) else {
        return null_argument("errors");
    };
    let Some(p_true) = (unsafe { p_true.as_ref() }) else {
        return null_argument("p_true");
    };
    let family_core = EstimatorFamily::from(family);
    let shaping_core = ShapingFunction::from(shaping);
    let mut inputs = ClosedFormInputs::new(&errors.0, &p_true.0);
    if observed_count > 0.0 {
        inputs = inputs.with_observed_count(observed_count);
    }
    if let Some(e_hat) = unsafe { imputed_errors.as_ref() } {
        inputs = inputs.with_e_hat(&e_hat.0);
    }
    if let Some(p_hat) = unsafe { p_hat.as_ref() } {
        inputs = inputs.with_p_hat(&p_hat.0);
    }
    let alpha_ref = unsafe { alpha.as_ref() };
    if family_core.is_dynamic() {
        let Some(alpha) = alpha_ref else {
            return null_argument("alpha (required for dynamic families)");
        };
        inputs = inputs.with_shaping(&shaping_core).with_alpha(&alpha.0);
    }
    match which(family_core, &inputs, &AnalyticsOptions::default()) {
        Ok(v) => write_out(out, v),
        Err(e) => fail(e),
    }
}

/// Closed-form bias of an estimator given the true propensities.
///
/// `observed_count` feeds the naive family's normalizer (pass Σp or the
/// realized count); values ≤ 0 mean "not supplied".
///
/// # Safety
/// All non-null handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mnar_closed_form_bias(
    family: MnarFamily,
    errors: *const MnarMatrix,
    imputed_errors: *const MnarMatrix,
    p_true: *const MnarMatrix,
    p_hat: *const MnarMatrix,
    observed_count: f64,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
    out: *mut f64,
) -> MnarStatus {
    guarded(|| unsafe {
        closed_form_call(
            family,
            errors,
            imputed_errors,
            p_true,
            p_hat,
            observed_count,
            shaping,
            alpha,
            out,
            closed_form_bias,
        )
    })
}

/// Closed-form variance of an estimator given the true propensities.
///
/// # Safety
/// Same contract as [`mnar_closed_form_bias`].
#[no_mangle]
pub unsafe extern "C" fn mnar_closed_form_variance(
    family: MnarFamily,
    errors: *const MnarMatrix,
    imputed_errors: *const MnarMatrix,
    p_true: *const MnarMatrix,
    p_hat: *const MnarMatrix,
    observed_count: f64,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
    out: *mut f64,
) -> MnarStatus {
    guarded(|| unsafe {
        closed_form_call(
            family,
            errors,
            imputed_errors,
            p_true,
            p_hat,
            observed_count,
            shaping,
            alpha,
            out,
            closed_form_variance,
        )
    })
}

/// Hoeffding deviation bound of a dynamic estimator (z = errors for D-IPS,
/// error deviations for D-DR).
///
/// # Safety
/// All handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mnar_tail_bound(
    family: MnarFamily,
    z: *const MnarMatrix,
    p_hat: *const MnarMatrix,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
    rho: f64,
    out: *mut f64,
) -> MnarStatus {
    guarded(|| {
        let Some(z) = (unsafe { z.as_ref() }) else {
            return null_argument("z");
        };
        let Some(p_hat) = (unsafe { p_hat.as_ref() }) else {
            return null_argument("p_hat");
        };
        let Some(alpha) = (unsafe { alpha.as_ref() }) else {
            return null_argument("alpha");
        };
        match tail_bound(
            EstimatorFamily::from(family),
            &z.0,
            &p_hat.0,
            &ShapingFunction::from(shaping),
            &alpha.0,
            rho,
            &AnalyticsOptions::default(),
        ) {
            Ok(v) => write_out(out, v),
            Err(e) => fail(e),
        }
    })
}

/// Monte Carlo verification run: draws `replicas` masks from the true
/// propensities and summarizes the estimator's empirical distribution.
///
/// # Safety
/// All non-null handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mnar_monte_carlo(
    family: MnarFamily,
    errors: *const MnarMatrix,
    imputed_errors: *const MnarMatrix,
    p_true: *const MnarMatrix,
    p_hat: *const MnarMatrix,
    shaping: MnarShaping,
    alpha: *const MnarMatrix,
    replicas: usize,
    seed: u64,
    out: *mut MnarMonteCarloSummary,
) -> MnarStatus {
    guarded(|| {
        let Some(errors) = (unsafe { errors.as_ref() }) else {
            return null_argument("errors");
        };
        let Some(p_true) = (unsafe { p_true.as_ref() }) else {
            return null_argument("p_true");
        };
        let spec = match unsafe { build_spec(family, shaping, alpha) } {
            Ok(v) => v,
            Err(status) => return status,
        };
        let e_hat = unsafe { imputed_errors.as_ref() }.map(|m| &m.0);
        let p_hat = unsafe { p_hat.as_ref() }.map(|m| &m.0);
        match monte_carlo(&spec, &errors.0, e_hat, &p_true.0, p_hat, replicas, seed) {
            Ok(r) => write_out(
                out,
                MnarMonteCarloSummary {
                    empirical_mean: r.empirical_mean,
                    empirical_variance: r.empirical_variance,
                    empirical_bias: r.empirical_bias,
                    standard_error: r.standard_error,
                    replicas: r.replicas as u64,
                    resampled_empty: r.resampled_empty as u64,
                },
            ),
            Err(e) => fail(e),
        }
    })
}
