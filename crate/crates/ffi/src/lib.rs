//! C ABI over calibrax.
//!
//! Every function returns a [`CalibraxStatus`]; on failure the message is
//! available from [`calibrax_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Output buffers
//! are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use calibrax::bench::{fit_method, AnyModel, AnyRecal, Method, MethodSettings};
use calibrax::models::{Persist, ProbabilisticModel};
use calibrax::online::BucketedRecalState;
use calibrax::recalibrate::Recalibrator;
use calibrax::{CategoricalDist, Error, GaussianDist, PredictiveDistribution};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibraxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericError = 4,
    ProtocolError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A fitted base model.
pub struct CalibraxModel(AnyModel);

/// A fitted recalibrator.
pub struct CalibraxRecalibrator(AnyRecal);

/// Online recalibrator for binary events.
pub struct CalibraxOnline(BucketedRecalState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CalibraxStatus {
    match e {
        Error::Domain(_) => CalibraxStatus::InvalidArgument,
        Error::Numeric(_) | Error::Training(_) => CalibraxStatus::NumericError,
        Error::Protocol(_) => CalibraxStatus::ProtocolError,
        _ => CalibraxStatus::DataError,
    }
}

struct Fail(CalibraxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CalibraxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CalibraxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CalibraxStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CalibraxStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CalibraxStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn calibrax_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn calibrax_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a base model saved by the CLI `fit` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_model_load(path: *const c_char, out: *mut *mut CalibraxModel) -> CalibraxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = AnyModel::load(&path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(CalibraxModel(m))));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`calibrax_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calibrax_model_free(model: *mut CalibraxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_model_num_features(model: *const CalibraxModel, out: *mut usize) -> CalibraxStatus {
    guard(|| write_out(out, handle(model, "model")?.0.num_features(), "out"))
}

unsafe fn forecast(
    model: *const CalibraxModel,
    recal: *const CalibraxRecalibrator,
    x: *const f64,
    nx: usize,
) -> Result<PredictiveDistribution, Fail> {
    let m = handle(model, "model")?;
    let d = m.0.predict_dist(slice_arg(x, nx, "x")?)?;
    Ok(match recal.as_ref() {
        Some(r) => r.0.recalibrate(&d)?,
        None => d,
    })
}

/// Quantiles of the forecast for one feature row, recalibrated when
/// `recal` is non-null. Writes `n_levels` values to `out`.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `recal` may be null.
#[no_mangle]
pub unsafe extern "C" fn calibrax_predict_quantiles(
    model: *const CalibraxModel,
    recal: *const CalibraxRecalibrator,
    x: *const f64,
    nx: usize,
    levels: *const f64,
    n_levels: usize,
    out: *mut f64,
) -> CalibraxStatus {
    guard(|| {
        let d = forecast(model, recal, x, nx)?;
        if matches!(d, PredictiveDistribution::Categorical(_)) {
            return Err(Fail(CalibraxStatus::InvalidArgument, "forecast is categorical".into()));
        }
        let levels = slice_arg(levels, n_levels, "levels")?;
        let out = out_slice(out, n_levels, "out")?;
        for (o, &t) in out.iter_mut().zip(levels) {
            *o = d.quantile_at(t)?;
        }
        Ok(())
    })
}

/// Class probabilities for one feature row, recalibrated when `recal` is
/// non-null. `capacity` is the length of `out`; the class count is written
/// to `n_classes` even when the buffer is too small.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `recal` may be null.
#[no_mangle]
pub unsafe extern "C" fn calibrax_predict_probs(
    model: *const CalibraxModel,
    recal: *const CalibraxRecalibrator,
    x: *const f64,
    nx: usize,
    out: *mut f64,
    capacity: usize,
    n_classes: *mut usize,
) -> CalibraxStatus {
    guard(|| {
        let PredictiveDistribution::Categorical(c) = forecast(model, recal, x, nx)? else {
            return Err(Fail(CalibraxStatus::InvalidArgument, "forecast is not categorical".into()));
        };
        write_out(n_classes, c.num_classes(), "n_classes")?;
        if capacity < c.num_classes() {
            return Err(Fail(
                CalibraxStatus::BufferTooSmall,
                format!("need room for {} classes", c.num_classes()),
            ));
        }
        out_slice(out, c.num_classes(), "out")?.copy_from_slice(c.probs());
        Ok(())
    })
}

/// Loads a recalibrator saved by the CLI `recalibrate` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_recalibrator_load(
    path: *const c_char,
    out: *mut *mut CalibraxRecalibrator,
) -> CalibraxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = AnyRecal::load(&path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(CalibraxRecalibrator(r))));
        Ok(())
    })
}

/// Fits a binary recalibrator (`"platt"` or `"kde"`) on scores in [0, 1]
/// and 0/1 labels.
///
/// # Safety
/// `method` must be NUL-terminated; arrays must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn calibrax_recalibrator_fit_binary(
    method: *const c_char,
    scores: *const f64,
    labels: *const u8,
    n: usize,
    seed: u64,
    out: *mut *mut CalibraxRecalibrator,
) -> CalibraxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if method.is_null() {
            return Err(null("method"));
        }
        let name = CStr::from_ptr(method)
            .to_str()
            .map_err(|_| Fail(CalibraxStatus::InvalidArgument, "method is not UTF-8".into()))?;
        let m: Method = name.parse()?;
        if !matches!(m, Method::Platt | Method::Kde | Method::Uncalibrated) {
            return Err(Fail(CalibraxStatus::InvalidArgument, format!("{name} is not a binary method")));
        }
        let scores = slice_arg(scores, n, "scores")?;
        let labels = slice_arg(labels, n, "labels")?;
        let mut forecasts = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for (&s, &l) in scores.iter().zip(labels) {
            if l > 1 {
                return Err(Fail(CalibraxStatus::DataError, format!("label {l} is not 0 or 1")));
            }
            forecasts.push(PredictiveDistribution::from(CategoricalDist::new(vec![1.0 - s, s])?));
            ys.push(f64::from(l));
        }
        let r = fit_method(m, &forecasts, &ys, &MethodSettings::default(), seed)?;
        out.write(Box::into_raw(Box::new(CalibraxRecalibrator(r))));
        Ok(())
    })
}

/// Recalibrated probability of the positive class for a raw score.
///
/// # Safety
/// `recal` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_recalibrator_apply_binary(
    recal: *const CalibraxRecalibrator,
    score: f64,
    out: *mut f64,
) -> CalibraxStatus {
    guard(|| {
        let r = handle(recal, "recal")?;
        let d: PredictiveDistribution = CategoricalDist::new(vec![1.0 - score, score])?.into();
        match r.0.recalibrate(&d)? {
            PredictiveDistribution::Categorical(c) => write_out(out, c.prob(1), "out"),
            _ => Err(Fail(CalibraxStatus::InvalidArgument, "recalibrator is not binary".into())),
        }
    })
}

/// Saves a recalibrator in the versioned JSON format.
///
/// # Safety
/// `recal` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn calibrax_recalibrator_save(
    recal: *const CalibraxRecalibrator,
    path: *const c_char,
) -> CalibraxStatus {
    guard(|| Ok(handle(recal, "recal")?.0.save(&path_arg(path)?)?))
}

/// # Safety
/// `recal` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calibrax_recalibrator_free(recal: *mut CalibraxRecalibrator) {
    if !recal.is_null() {
        drop(Box::from_raw(recal));
    }
}

/// Creates an online recalibrator with forecast grid resolution `n` and `m`
/// routing buckets.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_online_new(
    n: usize,
    m: usize,
    seed: u64,
    out: *mut *mut CalibraxOnline,
) -> CalibraxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = BucketedRecalState::new(n, m, seed)?;
        out.write(Box::into_raw(Box::new(CalibraxOnline(s))));
        Ok(())
    })
}

/// Forecast for a raw probability. Must be followed by
/// [`calibrax_online_update`] with the same raw probability.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_online_predict(state: *mut CalibraxOnline, p_raw: f64, out: *mut f64) -> CalibraxStatus {
    guard(|| {
        let s = handle_mut(state, "state")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, p) = s.0.predict(p_raw)?;
        out.write(p);
        Ok(())
    })
}

/// Reports the outcome (0 or 1) for the pending forecast of `p_raw`.
///
/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn calibrax_online_update(state: *mut CalibraxOnline, p_raw: f64, y: u8) -> CalibraxStatus {
    guard(|| {
        if y > 1 {
            return Err(Fail(CalibraxStatus::InvalidArgument, format!("outcome {y} is not 0 or 1")));
        }
        Ok(handle_mut(state, "state")?.0.update(p_raw, y == 1)?)
    })
}

/// ℓ1 calibration error of the forecasts issued so far.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_online_calibration_error(
    state: *const CalibraxOnline,
    out: *mut f64,
) -> CalibraxStatus {
    guard(|| {
        let s = handle(state, "state")?;
        let c = s.0.ledger().calibration_error(calibrax::online::l1_distance)?;
        write_out(out, c, "out")
    })
}

/// # Safety
/// `state` must come from [`calibrax_online_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calibrax_online_free(state: *mut CalibraxOnline) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Closed-form CRPS of a Gaussian forecast.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_crps_gaussian(mu: f64, sigma: f64, y: f64, out: *mut f64) -> CalibraxStatus {
    guard(|| {
        let d: PredictiveDistribution = GaussianDist::new(mu, sigma)?.into();
        write_out(out, calibrax::scoring::crps(&d, y)?, "out")
    })
}

/// Check (pinball) score `ρ_τ(y - f)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn calibrax_check_score(tau: f64, y: f64, f: f64, out: *mut f64) -> CalibraxStatus {
    guard(|| {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Fail(CalibraxStatus::InvalidArgument, format!("level {tau} outside (0, 1)")));
        }
        write_out(out, calibrax::scoring::check_score(tau, y, f), "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn errors_set_the_message() {
        let st = unsafe { calibrax_check_score(1.5, 0.0, 0.0, ptr::null_mut()) };
        assert_eq!(st, CalibraxStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(calibrax_last_error()) }.to_str().unwrap();
        assert!(msg.contains("outside"));
        let mut v = 0.0;
        assert_eq!(unsafe { calibrax_check_score(0.5, 1.0, 0.0, &mut v) }, CalibraxStatus::Ok);
        assert_eq!(v, 0.5);
        assert!(unsafe { CStr::from_ptr(calibrax_last_error()) }.to_bytes().is_empty());
    }

    #[test]
    fn null_out_is_reported() {
        assert_eq!(unsafe { calibrax_check_score(0.5, 1.0, 0.0, ptr::null_mut()) }, CalibraxStatus::NullPointer);
    }
}
