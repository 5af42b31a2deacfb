//! C interface to the `rbml` model hierarchy.
//!
//! Every fallible call returns an [`RbmlStatus`]; on failure the message is available from
//! [`rbml_last_error`] on the same thread. Handles are opaque and must be released with the
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use rbml::adaptive::{AdaptiveModel, Tier};
use rbml::config::RunConfig;
use rbml::fom::FomProblem;
use rbml::model::{OutputSignal, Parameter, StateModel};
use rbml::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbmlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Io = 6,
    Panic = 7,
}

/// Full-order model built from a run configuration.
pub struct RbmlFom {
    fom: Arc<FomProblem>,
}

/// Adaptive FOM / reduced-basis / ML model.
pub struct RbmlModel {
    model: AdaptiveModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RbmlStatus {
    match e {
        Error::Config { .. } | Error::Json(_) => RbmlStatus::Config,
        Error::Io(_) | Error::Csv(_) => RbmlStatus::Io,
        e if e.is_numerical() => RbmlStatus::Numerical,
        _ => RbmlStatus::InvalidArgument,
    }
}

fn guard<F>(f: F) -> RbmlStatus
where
    F: FnOnce() -> Result<(), (RbmlStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RbmlStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RbmlStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RbmlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RbmlStatus, String) {
    (RbmlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RbmlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (RbmlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_mu(mu: *const f64, len: usize) -> Result<Parameter, (RbmlStatus, String)> {
    if mu.is_null() && len > 0 {
        return Err(null("mu"));
    }
    let values = if len == 0 { Vec::new() } else { slice::from_raw_parts(mu, len).to_vec() };
    Ok(Parameter(values))
}

unsafe fn write_signal(signal: &OutputSignal, out: *mut f64, out_len: usize) -> Result<(), (RbmlStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if out_len < signal.values.len() {
        return Err((
            RbmlStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", signal.values.len()),
        ));
    }
    slice::from_raw_parts_mut(out, signal.values.len()).copy_from_slice(&signal.values);
    Ok(())
}

fn parse_config(json: &str) -> Result<RunConfig, (RbmlStatus, String)> {
    RunConfig::from_json(json).map_err(lib_err)
}

/// Message of the last failed call on this thread (empty after a success). Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn rbml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds the full-order model described by a JSON run configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbml_fom_new(config_json: *const c_char, out: *mut *mut RbmlFom) -> RbmlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = parse_config(read_str(config_json, "config_json")?)?;
        let fom = cfg.problem.build().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RbmlFom { fom: Arc::new(fom) }));
        Ok(())
    })
}

/// # Safety
/// `fom` must come from [`rbml_fom_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rbml_fom_free(fom: *mut RbmlFom) {
    if !fom.is_null() {
        drop(Box::from_raw(fom));
    }
}

/// # Safety
/// `fom` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rbml_fom_param_dim(fom: *const RbmlFom) -> usize {
    fom.as_ref().map_or(0, |f| f.fom.param_dim())
}

/// Number of time nodes, i.e. the length of every output signal.
///
/// # Safety
/// `fom` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rbml_fom_num_time_nodes(fom: *const RbmlFom) -> usize {
    fom.as_ref().map_or(0, |f| f.fom.time_grid.num_nodes())
}

/// Number of finite element unknowns.
///
/// # Safety
/// `fom` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rbml_fom_dim(fom: *const RbmlFom) -> usize {
    fom.as_ref().map_or(0, |f| f.fom.dim())
}

/// Full-order output signal at `mu` written to `out[0..num_time_nodes]`.
///
/// # Safety
/// `mu` must point to `mu_len` doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rbml_fom_eval_output(
    fom: *const RbmlFom,
    mu: *const f64,
    mu_len: usize,
    out: *mut f64,
    out_len: usize,
) -> RbmlStatus {
    guard(|| {
        let fom = fom.as_ref().ok_or_else(|| null("fom"))?;
        let mu = read_mu(mu, mu_len)?;
        fom.fom.parameter_box.check(&mu).map_err(lib_err)?;
        let signal = fom.fom.eval_output(&mu).map_err(lib_err)?;
        write_signal(&signal, out, out_len)
    })
}

/// Creates an adaptive model on a shared full-order model. The tolerance, ML backend,
/// retraining policy and HaPOD settings are read from the JSON run configuration (its
/// `problem` entry is ignored). `epsilon` overrides the configured tolerance when it is
/// nonnegative.
///
/// # Safety
/// `fom` must be a live handle, `config_json` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rbml_model_new(
    fom: *const RbmlFom,
    config_json: *const c_char,
    epsilon: f64,
    out: *mut *mut RbmlModel,
) -> RbmlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let fom = fom.as_ref().ok_or_else(|| null("fom"))?;
        let cfg = parse_config(read_str(config_json, "config_json")?)?;
        let eps = if epsilon >= 0.0 { epsilon } else { cfg.fixed_epsilon().unwrap_or(1e-3) };
        let model = AdaptiveModel::new(Arc::clone(&fom.fom), eps, cfg.hapod, &cfg.seeded_backend(), cfg.retrain)
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RbmlModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`rbml_model_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rbml_model_free(model: *mut RbmlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Certified output at `mu`. `tier` (optional) receives 0 for ML, 1 for reduced basis and 2
/// for the enrichment step.
///
/// # Safety
/// `model` must be a live handle not used concurrently; buffers as in
/// [`rbml_fom_eval_output`]; `tier` may be null.
#[no_mangle]
pub unsafe extern "C" fn rbml_model_eval_output(
    model: *mut RbmlModel,
    mu: *const f64,
    mu_len: usize,
    out: *mut f64,
    out_len: usize,
    tier: *mut i32,
) -> RbmlStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        let mu = read_mu(mu, mu_len)?;
        model.model.fom().parameter_box.check(&mu).map_err(lib_err)?;
        let (signal, record) = model.model.eval_output(&mu).map_err(lib_err)?;
        write_signal(&signal, out, out_len)?;
        if let Some(t) = tier.as_mut() {
            *t = match record.tier {
                Tier::Ml => 0,
                Tier::Rb => 1,
                Tier::Fom => 2,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle or null (returns NaN).
#[no_mangle]
pub unsafe extern "C" fn rbml_model_epsilon(model: *const RbmlModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.model.epsilon())
}

/// Current reduced basis dimension.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rbml_model_basis_dim(model: *const RbmlModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.rb_generator().dim())
}

/// Number of queries answered so far.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn rbml_model_num_evals(model: *const RbmlModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.records().len())
}
