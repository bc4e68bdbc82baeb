//! C ABI over the `ctmc-evidence` library.
//!
//! Models, evidence and weight vectors are opaque heap handles released with the
//! matching `*_free` function. Every fallible call returns a [`CeStatus`]; on
//! failure [`ce_last_error`] describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctmc_evidence::refine::{analyze, AnalysisConfig, RefinementMode};
use ctmc_evidence::solver::Opt;
use ctmc_evidence::unfolding::{conditional_weight, evidence_likelihood};
use ctmc_evidence::{Ctmc, Error, ImpreciseEvidence, ObservationFormula, WeightVector, DEFAULT_TRANSIENT_EPS};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Semantic = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// Parsed CTMC.
pub struct CeModel(Ctmc);

/// Parsed evidence; precise evidence is the special case of point time sets.
pub struct CeEvidence(ImpreciseEvidence);

/// State weights bound to the model they were built for.
pub struct CeWeights(WeightVector);

/// Refinement mode for [`CeConfig::mode`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeMode {
    Guided = 0,
    Full = 1,
}

/// Optimization direction for [`CeConfig::direction`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeDirection {
    Max = 0,
    Min = 1,
}

/// Analysis settings. Obtain defaults from [`ce_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CeConfig {
    pub time_limit: f64,
    /// 0 means no cap.
    pub max_iters: usize,
    /// Negative means no target.
    pub width_target: f64,
    pub transient_eps: f64,
    pub vi_tol: f64,
    pub mode: CeMode,
    pub direction: CeDirection,
}

/// Final bounds of an analysis run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CeBounds {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub total_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CeStatus {
    match e {
        Error::Parse { .. } => CeStatus::Parse,
        Error::Semantic(_) => CeStatus::Semantic,
        Error::Io(_) => CeStatus::Io,
        _ => CeStatus::Numeric,
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (CeStatus, String)>) -> CeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CeStatus::Panic
        }
    }
}

fn lib(e: Error) -> (CeStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, (CeStatus, String)> {
    if p.is_null() {
        return Err((CeStatus::NullPointer, "null string".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CeStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CeStatus, String)> {
    p.as_ref().ok_or_else(|| (CeStatus::NullPointer, format!("null {what}")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (CeStatus, String)> {
    p.as_mut().ok_or_else(|| (CeStatus::NullPointer, format!("null {what} output")))
}

/// Message of the last failed call on this thread; empty after a success.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ce_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ce_model_parse(text_: *const c_char, out_model: *mut *mut CeModel) -> CeStatus {
    guard(|| {
        let slot = out(out_model, "model")?;
        *slot = ptr::null_mut();
        let ctmc = Ctmc::parse(text(text_)?).map_err(lib)?;
        *slot = Box::into_raw(Box::new(CeModel(ctmc)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ce_model_parse`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ce_model_free(model: *mut CeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ce_model_num_states(model: *const CeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_states())
}

/// Parses an evidence file body and checks it against `model`'s labels.
///
/// # Safety
/// `model` must be a live handle, `text` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ce_evidence_parse(
    model: *const CeModel,
    text_: *const c_char,
    out_evidence: *mut *mut CeEvidence,
) -> CeStatus {
    guard(|| {
        let slot = out(out_evidence, "evidence")?;
        *slot = ptr::null_mut();
        let m = deref(model, "model")?;
        let omega = ImpreciseEvidence::parse(text(text_)?).map_err(lib)?;
        omega.check_against(&m.0).map_err(lib)?;
        *slot = Box::into_raw(Box::new(CeEvidence(omega)));
        Ok(())
    })
}

/// # Safety
/// `evidence` must come from [`ce_evidence_parse`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ce_evidence_free(evidence: *mut CeEvidence) {
    if !evidence.is_null() {
        drop(Box::from_raw(evidence));
    }
}

/// Weights w(s) = probability of reaching `formula` within `horizon`.
///
/// # Safety
/// `model` must be a live handle, `formula` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ce_weights_from_property(
    model: *const CeModel,
    formula: *const c_char,
    horizon: f64,
    transient_eps: f64,
    out_weights: *mut *mut CeWeights,
) -> CeStatus {
    guard(|| {
        let slot = out(out_weights, "weights")?;
        *slot = ptr::null_mut();
        let m = &deref(model, "model")?.0;
        let f: ObservationFormula = text(formula)?
            .parse()
            .map_err(|e: String| (CeStatus::Parse, e))?;
        f.check_against(m).map_err(lib)?;
        if !(horizon >= 0.0 && horizon.is_finite()) || !(transient_eps > 0.0) {
            return Err((CeStatus::Semantic, "horizon must be finite and nonnegative, eps positive".into()));
        }
        let w = m.weight_from_property(&f.mask(m), horizon, transient_eps);
        *slot = Box::into_raw(Box::new(CeWeights(w)));
        Ok(())
    })
}

/// Explicit weights, one per model state in declaration order.
///
/// # Safety
/// `values` must point to `len` doubles; `model` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ce_weights_from_array(
    model: *const CeModel,
    values: *const f64,
    len: usize,
    out_weights: *mut *mut CeWeights,
) -> CeStatus {
    guard(|| {
        let slot = out(out_weights, "weights")?;
        *slot = ptr::null_mut();
        let m = &deref(model, "model")?.0;
        if values.is_null() {
            return Err((CeStatus::NullPointer, "null weight array".into()));
        }
        if len != m.num_states() {
            return Err((CeStatus::Semantic, format!("{len} weights given for {} states", m.num_states())));
        }
        let w = WeightVector::new(std::slice::from_raw_parts(values, len).to_vec()).map_err(lib)?;
        *slot = Box::into_raw(Box::new(CeWeights(w)));
        Ok(())
    })
}

/// # Safety
/// `weights` must come from a `ce_weights_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ce_weights_free(weights: *mut CeWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

#[no_mangle]
pub extern "C" fn ce_config_default() -> CeConfig {
    let d = AnalysisConfig::default();
    CeConfig {
        time_limit: d.time_limit,
        max_iters: 0,
        width_target: -1.0,
        transient_eps: d.transient_eps,
        vi_tol: d.vi_tol,
        mode: CeMode::Guided,
        direction: CeDirection::Max,
    }
}

fn to_config(c: &CeConfig) -> AnalysisConfig {
    AnalysisConfig {
        time_limit: c.time_limit,
        max_iters: (c.max_iters > 0).then_some(c.max_iters),
        width_target: (c.width_target >= 0.0).then_some(c.width_target),
        transient_eps: c.transient_eps,
        vi_tol: c.vi_tol,
        mode: match c.mode {
            CeMode::Guided => RefinementMode::Guided,
            CeMode::Full => RefinementMode::Full,
        },
        direction: match c.direction {
            CeDirection::Max => Opt::Max,
            CeDirection::Min => Opt::Min,
        },
        seed: 0,
    }
}

/// Refines bounds until a stop condition of `config` holds. A null `config` uses defaults.
///
/// # Safety
/// All handles must be live and built for the same model; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_analyze(
    model: *const CeModel,
    evidence: *const CeEvidence,
    weights: *const CeWeights,
    config: *const CeConfig,
    out_bounds: *mut CeBounds,
) -> CeStatus {
    guard(|| {
        let slot = out(out_bounds, "bounds")?;
        let m = &deref(model, "model")?.0;
        let e = &deref(evidence, "evidence")?.0;
        let w = &deref(weights, "weights")?.0;
        let cfg = config.as_ref().map_or_else(|| AnalysisConfig::default(), to_config);
        let trace = analyze(m, e, w, &cfg).map_err(lib)?;
        let (lower, upper) = trace.bounds();
        *slot = CeBounds {
            lower,
            upper,
            iterations: trace.records.len(),
            total_s: trace.total_s(),
        };
        Ok(())
    })
}

fn precise_of(e: &ImpreciseEvidence) -> Result<ctmc_evidence::PreciseEvidence, (CeStatus, String)> {
    e.as_precise()
        .ok_or_else(|| (CeStatus::Semantic, "evidence has non-point time sets".into()))
}

/// Exact conditional weight of precisely timed evidence. Zero-likelihood evidence yields 0.
///
/// # Safety
/// All handles must be live and built for the same model; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_precise(
    model: *const CeModel,
    evidence: *const CeEvidence,
    weights: *const CeWeights,
    transient_eps: f64,
    out_value: *mut f64,
) -> CeStatus {
    guard(|| {
        let slot = out(out_value, "value")?;
        let m = &deref(model, "model")?.0;
        let rho = precise_of(&deref(evidence, "evidence")?.0)?;
        let w = &deref(weights, "weights")?.0;
        let eps = if transient_eps > 0.0 { transient_eps } else { DEFAULT_TRANSIENT_EPS };
        *slot = conditional_weight(m, &rho, w, eps).value;
        Ok(())
    })
}

/// Probability that the model produces precisely timed evidence.
///
/// # Safety
/// Handles must be live and built for the same model; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_likelihood(
    model: *const CeModel,
    evidence: *const CeEvidence,
    transient_eps: f64,
    out_value: *mut f64,
) -> CeStatus {
    guard(|| {
        let slot = out(out_value, "value")?;
        let m = &deref(model, "model")?.0;
        let rho = precise_of(&deref(evidence, "evidence")?.0)?;
        let eps = if transient_eps > 0.0 { transient_eps } else { DEFAULT_TRANSIENT_EPS };
        *slot = evidence_likelihood(m, &rho, eps);
        Ok(())
    })
}
