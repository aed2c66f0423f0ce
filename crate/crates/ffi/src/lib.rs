//! C ABI for the ksegment library.
//!
//! Every fallible function returns a [`KsStatus`]; on failure a description
//! is available from [`ks_last_error_message`] on the same thread. Models are
//! opaque handles created by [`ks_model_load`] and released with
//! [`ks_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ksegment::error::Error;
use ksegment::fairness::{deviation_weighted_fairness, group_fairness, ratio_samples, relative_unfairness};
use ksegment::KSegmentModel;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Data = 5,
    Training = 6,
    Prediction = 7,
    Domain = 8,
    DegenerateBaseline = 9,
    Serialization = 10,
    Panic = 11,
}

/// Opaque handle to a trained K-segment ensemble.
pub struct KsModel {
    inner: KSegmentModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> KsStatus {
    match err.root() {
        Error::Schema { .. } | Error::Row { .. } | Error::Dataset(_) | Error::Split(_) => KsStatus::Data,
        Error::Training(_) => KsStatus::Training,
        Error::Prediction(_) => KsStatus::Prediction,
        Error::Domain(_) | Error::Partition(_) | Error::UndefinedVariance(_) => KsStatus::Domain,
        Error::DegenerateBaseline(_) => KsStatus::DegenerateBaseline,
        Error::Serialization(_) => KsStatus::Serialization,
        Error::Config { .. } => KsStatus::Config,
        Error::Io { .. } => KsStatus::Io,
        Error::Stage { .. } => KsStatus::Data,
    }
}

struct Failure(KsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(KsStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            KsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            KsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(KsStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn model_arg<'a>(model: *const KsModel) -> Result<&'a KSegmentModel, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Description of the last failure on the calling thread, or NULL if the
/// last call succeeded. The pointer stays valid until the next call into
/// this library on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a saved ensemble. On success `*out` receives a handle that must be
/// released with `ks_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_model_load(path: *const c_char, out: *mut *mut KsModel) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = KSegmentModel::load(path_arg(path, "path")?)?;
        out.write(Box::into_raw(Box::new(KsModel { inner: model })));
        Ok(())
    })
}

/// Releases a handle from `ks_model_load`. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_model_free(model: *mut KsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_model_num_segments(model: *const KsModel, out: *mut usize) -> KsStatus {
    guard(|| write_out(out, model_arg(model)?.num_segments(), "out"))
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_model_feature_dim(model: *const KsModel, out: *mut usize) -> KsStatus {
    guard(|| write_out(out, model_arg(model)?.feature_dim(), "out"))
}

/// Empirical quantile of a prior assessment within the model's training
/// population.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_model_quantile(model: *const KsModel, prior_assessment: f64, out: *mut f64) -> KsStatus {
    guard(|| write_out(out, model_arg(model)?.quantile(prior_assessment), "out"))
}

/// Submodel weights at quantile `y`; `out` must hold `len` values and `len`
/// must equal the number of segments.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_model_weights(model: *const KsModel, y: f64, out: *mut f64, len: usize) -> KsStatus {
    guard(|| {
        let m = model_arg(model)?;
        if len != m.num_segments() {
            return Err(Failure(
                KsStatus::InvalidArgument,
                format!("weight buffer holds {len} values, model has {} segments", m.num_segments()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let w = m.weights_at(y)?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Assesses one property from its features and prior assessment.
///
/// # Safety
/// `features` must point to `feature_dim` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ks_model_assess(
    model: *const KsModel,
    features: *const f64,
    feature_dim: usize,
    prior_assessment: f64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = slice_arg(features, feature_dim, "features")?;
        let value = m.assess_at(x, m.quantile(prior_assessment))?;
        write_out(out, value, "out")
    })
}

/// Assesses `rows` properties. `features` is row-major with `feature_dim`
/// columns; `prior_assessments` and `out` hold `rows` values.
///
/// # Safety
/// All buffers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ks_model_assess_batch(
    model: *const KsModel,
    features: *const f64,
    rows: usize,
    feature_dim: usize,
    prior_assessments: *const f64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let total = rows
            .checked_mul(feature_dim)
            .ok_or_else(|| Failure(KsStatus::InvalidArgument, "rows * feature_dim overflows".into()))?;
        let x = slice_arg(features, total, "features")?;
        let priors = slice_arg(prior_assessments, rows, "prior_assessments")?;
        if rows == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let values = (0..rows)
            .map(|i| m.assess_at(&x[i * feature_dim..(i + 1) * feature_dim], m.quantile(priors[i])))
            .collect::<Result<Vec<f64>, Error>>()?;
        slice::from_raw_parts_mut(out, rows).copy_from_slice(&values);
        Ok(())
    })
}

/// Group fairness of `m` assessments against their sale prices with `n`
/// price groups. The result is nonpositive; 0 is perfectly fair.
///
/// # Safety
/// `sale_prices` and `assessed` must point to `m` doubles; `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ks_group_fairness(
    sale_prices: *const f64,
    assessed: *const f64,
    m: usize,
    n: usize,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let samples = ratio_samples(slice_arg(sale_prices, m, "sale_prices")?, slice_arg(assessed, m, "assessed")?)?;
        write_out(out, group_fairness(&samples, n)?, "out")
    })
}

/// Deviation-weighted fairness with exponent `alpha` (nonpositive result).
///
/// # Safety
/// `sale_prices` and `assessed` must point to `m` doubles; `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ks_deviation_fairness(
    sale_prices: *const f64,
    assessed: *const f64,
    m: usize,
    alpha: f64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let samples = ratio_samples(slice_arg(sale_prices, m, "sale_prices")?, slice_arg(assessed, m, "assessed")?)?;
        write_out(out, deviation_weighted_fairness(&samples, alpha)?, "out")
    })
}

/// Ratio of a model's fairness score to the original model's score.
/// Returns `KS_STATUS_DEGENERATE_BASELINE` when the original score is 0.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_relative_unfairness(model_score: f64, original_score: f64, out: *mut f64) -> KsStatus {
    guard(|| write_out(out, relative_unfairness(model_score, original_score)?, "out"))
}

/// Runs the experiment described by a JSON config file and writes its
/// reports, models and CSV tables to the configured output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ks_run_experiment(config_path: *const c_char) -> KsStatus {
    guard(|| {
        ksegment::run_experiment(path_arg(config_path, "config_path")?)?;
        Ok(())
    })
}
