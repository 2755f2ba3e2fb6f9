//! C ABI over harvest-core.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a
//! [`HarvestStatus`] and writes its result through an out-pointer. Strings
//! returned through `char **` are NUL-terminated UTF-8 and must be released
//! with [`harvest_string_free`]. The message for the most recent failure on
//! the calling thread is available from [`harvest_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use harvest_core::dynamics::export::trajectory_csv;
use harvest_core::model::ModelError;
use harvest_core::policy::{self, PolicyError, Region, RolloutOptions};
use harvest_core::{Model, ModelParams, PhasePortrait};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarvestStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    AssumptionFailure = 4,
    Unsupported = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarvestRegion {
    R1 = 0,
    R2,
    R3,
    R4,
    R5,
    SigmaStar,
    SigmaTilde,
    Sigma0,
    SigmaS,
    Gamma3,
    Gamma4,
    SingularPoint,
    SingularTilde,
    Boundary,
    Unsupported,
}

impl From<Region> for HarvestRegion {
    fn from(r: Region) -> Self {
        match r {
            Region::R1 => HarvestRegion::R1,
            Region::R2 => HarvestRegion::R2,
            Region::R3 => HarvestRegion::R3,
            Region::R4 => HarvestRegion::R4,
            Region::R5 => HarvestRegion::R5,
            Region::SigmaStar => HarvestRegion::SigmaStar,
            Region::SigmaTilde => HarvestRegion::SigmaTilde,
            Region::Sigma0 => HarvestRegion::Sigma0,
            Region::SigmaS => HarvestRegion::SigmaS,
            Region::Gamma3 => HarvestRegion::Gamma3,
            Region::Gamma4 => HarvestRegion::Gamma4,
            Region::SingularPoint => HarvestRegion::SingularPoint,
            Region::SingularTilde => HarvestRegion::SingularTilde,
            Region::Boundary => HarvestRegion::Boundary,
            Region::Unsupported => HarvestRegion::Unsupported,
        }
    }
}

/// Derived constants of a model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HarvestConstants {
    pub kappa: f64,
    pub r_prime: f64,
    pub c_star: f64,
    pub x_tilde: f64,
    pub x_star: f64,
    pub k_tilde: f64,
    pub k_star: f64,
    pub x_bar: f64,
}

/// Opaque model handle.
pub struct HarvestModel {
    inner: Model,
}

/// Opaque phase-portrait handle.
pub struct HarvestPortrait {
    inner: PhasePortrait,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Failure(HarvestStatus, String);

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Parse(_) => HarvestStatus::Parse,
            ModelError::InvalidParameter { .. } | ModelError::Domain { .. } => HarvestStatus::InvalidArgument,
            _ => HarvestStatus::AssumptionFailure,
        };
        Failure(status, e.to_string())
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        let status = match e {
            PolicyError::Unsupported { .. } => HarvestStatus::Unsupported,
            _ => HarvestStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HarvestStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, converting failures and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HarvestStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            HarvestStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HarvestStatus::Panic
        }
    }
}

fn out_string(text: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let s = CString::new(text).map_err(|_| Failure(HarvestStatus::Numerical, "string contains NUL".into()))?;
    // SAFETY: caller checked `out` for null.
    unsafe { *out = s.into_raw() };
    Ok(())
}

unsafe fn model_ref<'a>(m: *const HarvestModel) -> Result<&'a Model, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn portrait_ref<'a>(p: *const HarvestPortrait) -> Result<&'a PhasePortrait, Failure> {
    p.as_ref().map(|p| &p.inner).ok_or_else(|| null("portrait"))
}

fn finite(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Failure(HarvestStatus::InvalidArgument, format!("{name} must be finite")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Failure(HarvestStatus::InvalidArgument, format!("{name} must be > 0")))
    }
}

/// Message for the most recent failure on this thread; empty after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn harvest_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn harvest_status_message(status: HarvestStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HarvestStatus::Ok => c"ok",
        HarvestStatus::NullPointer => c"null pointer argument",
        HarvestStatus::InvalidArgument => c"invalid argument",
        HarvestStatus::Parse => c"parse error",
        HarvestStatus::AssumptionFailure => c"model assumptions fail",
        HarvestStatus::Unsupported => c"unsupported state",
        HarvestStatus::Numerical => c"numerical failure",
        HarvestStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn harvest_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in default model (logistic a = k = 1).
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn harvest_model_fix1(out: *mut *mut HarvestModel) -> HarvestStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(HarvestModel { inner: Model::fix1() }));
        Ok(())
    })
}

/// A model from a parameter JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn harvest_model_from_json(json: *const c_char, out: *mut *mut HarvestModel) -> HarvestStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(HarvestStatus::Parse, format!("not UTF-8: {e}")))?;
        let params = ModelParams::from_json(text)?;
        let report = params.verify_assumptions(1000);
        if !report.all_pass {
            let failed: Vec<String> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
            return Err(Failure(
                HarvestStatus::AssumptionFailure,
                format!("assumptions fail: {}", failed.join(", ")),
            ));
        }
        *out = Box::into_raw(Box::new(HarvestModel { inner: Model::new(params)? }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn harvest_model_free(model: *mut HarvestModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn harvest_model_constants(model: *const HarvestModel, out: *mut HarvestConstants) -> HarvestStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = m.constants;
        *out = HarvestConstants {
            kappa: c.kappa,
            r_prime: c.r_prime,
            c_star: c.c_star,
            x_tilde: c.x_tilde,
            x_star: c.x_star,
            k_tilde: c.k_tilde,
            k_star: c.k_star,
            x_bar: c.x_bar,
        };
        Ok(())
    })
}

/// Builds the phase portrait of a model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn harvest_portrait_build(model: *const HarvestModel, out: *mut *mut HarvestPortrait) -> HarvestStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = PhasePortrait::build(m).map_err(|e| Failure(HarvestStatus::Numerical, e.to_string()))?;
        *out = Box::into_raw(Box::new(HarvestPortrait { inner: p }));
        Ok(())
    })
}

/// # Safety
/// `portrait` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn harvest_portrait_free(portrait: *mut HarvestPortrait) {
    if !portrait.is_null() {
        drop(Box::from_raw(portrait));
    }
}

/// Special points of the portrait as JSON.
///
/// # Safety
/// `portrait` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn harvest_portrait_specials_json(portrait: *const HarvestPortrait, out: *mut *mut c_char) -> HarvestStatus {
    guard(|| {
        let p = portrait_ref(portrait)?;
        if out.is_null() {
            return Err(null("out"));
        }
        out_string(p.specials_json(), out)
    })
}

/// Region of (x, K). Boundary and unsupported states are reported through
/// `out`, not as an error.
///
/// # Safety
/// `portrait` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn harvest_classify(
    portrait: *const HarvestPortrait,
    x: f64,
    k: f64,
    out: *mut HarvestRegion,
) -> HarvestStatus {
    guard(|| {
        let p = portrait_ref(portrait)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = policy::classify(p, x, k).into();
        Ok(())
    })
}

/// Objective of the optimal policy from (x, K) over `horizon` plus the
/// stationary tail.
///
/// # Safety
/// `portrait` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn harvest_value(
    portrait: *const HarvestPortrait,
    x: f64,
    k: f64,
    horizon: f64,
    out: *mut f64,
) -> HarvestStatus {
    guard(|| {
        let p = portrait_ref(portrait)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        finite("x", x)?;
        finite("K", k)?;
        positive("horizon", horizon)?;
        *out = policy::value(p, x, k, horizon)?;
        Ok(())
    })
}

/// Rolls out the optimal policy. Writes the schedule JSON and, when
/// `trajectory_csv_out` is non-null, the trajectory sampled every `dt`.
///
/// # Safety
/// `portrait` must be a live handle; `schedule_out` must be writable;
/// `trajectory_csv_out` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn harvest_simulate(
    portrait: *const HarvestPortrait,
    x: f64,
    k: f64,
    horizon: f64,
    dt: f64,
    schedule_out: *mut *mut c_char,
    trajectory_csv_out: *mut *mut c_char,
) -> HarvestStatus {
    guard(|| {
        let p = portrait_ref(portrait)?;
        if schedule_out.is_null() {
            return Err(null("schedule_out"));
        }
        finite("x", x)?;
        finite("K", k)?;
        positive("horizon", horizon)?;
        positive("dt", dt)?;
        let opts = RolloutOptions {
            horizon,
            ..RolloutOptions::default()
        };
        let ro = policy::rollout(p, x, k, &opts)?;
        let schedule = serde_json::to_string_pretty(&ro.schedule_file())
            .map_err(|e| Failure(HarvestStatus::Numerical, e.to_string()))?;
        let csv = (!trajectory_csv_out.is_null()).then(|| trajectory_csv(&ro.trajectory, dt));
        out_string(schedule, schedule_out)?;
        if let Some(csv) = csv {
            out_string(csv, trajectory_csv_out)?;
        }
        Ok(())
    })
}
