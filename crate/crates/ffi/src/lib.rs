//! C ABI for distkm.
//!
//! Objects are opaque handles created and released through this interface.
//! Every fallible function returns a [`DistkmStatus`]; on failure a message is
//! available from [`distkm_last_error`] on the same thread. Missing numeric
//! values are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use distkm::dataio::{self, CsvSchema, LongDataset, OperationalizeOptions};
use distkm::skewnormal::{self, FitOptions, SnParams};
use distkm::survival::{self, EstimatorOptions, SeMode, SurvivalCurve};
use distkm::{special, Error, ErrorKind};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistkmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericError = 4,
    IoError = 5,
    Panic = 6,
}

/// Standard-error variant used for the distributional estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistkmSeMode {
    PaperDelta = 0,
    FullDelta = 1,
    Bootstrap = 2,
    All = 3,
}

/// Long-format observations: one (subject, time, value) record per entry.
pub struct DistkmDataset {
    records: Vec<(String, u32, Option<f64>)>,
}

/// An estimated survival curve.
pub struct DistkmCurve {
    curve: SurvivalCurve,
}

/// Estimation settings; obtain defaults from [`distkm_estimate_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DistkmEstimateOptions {
    pub cutpoint: f64,
    pub min_n_fit: usize,
    pub bootstrap_reps: usize,
    pub se_mode: DistkmSeMode,
    pub seed: u64,
    /// Drop subjects above the cut-point at time 1 and start at time 2.
    pub baseline_exclusion: bool,
    /// Keep subjects whose first observation is after time 1.
    pub allow_late_entry: bool,
}

/// One time point of a curve. Undefined quantities are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DistkmPoint {
    pub time: u32,
    pub n_risk: usize,
    pub n_event: usize,
    pub n_est: usize,
    pub estimable: bool,
    pub p_hat: f64,
    pub s_hat: f64,
    pub se_dist: f64,
    pub se_boot: f64,
}

/// Skew-normal fit in direct parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DistkmSnFit {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    pub loglik: f64,
    pub n_fit: usize,
    pub converged: bool,
    /// The shape was set to 0 because the skew-normal fit did not improve on the normal.
    pub fallback: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> DistkmStatus {
    match err {
        Error::File { .. } | Error::Io(_) => DistkmStatus::IoError,
        _ => match err.kind() {
            ErrorKind::Config => DistkmStatus::InvalidArgument,
            ErrorKind::Data => DistkmStatus::DataError,
            ErrorKind::Numeric => DistkmStatus::NumericError,
        },
    }
}

fn fail(status: DistkmStatus, message: impl Into<String>) -> DistkmStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> DistkmStatus) -> DistkmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(DistkmStatus::Panic, "internal panic"))
}

fn from_result<T>(r: distkm::Result<T>, ok: impl FnOnce(T)) -> DistkmStatus {
    match r {
        Ok(v) => {
            ok(v);
            DistkmStatus::Ok
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

fn nan_or(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn distkm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or NULL. Valid until the next
/// call into this library on the same thread.
#[no_mangle]
pub extern "C" fn distkm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Create an empty dataset. Release with [`distkm_dataset_free`].
#[no_mangle]
pub extern "C" fn distkm_dataset_new() -> *mut DistkmDataset {
    Box::into_raw(Box::new(DistkmDataset { records: Vec::new() }))
}

/// Release a dataset. NULL is ignored.
///
/// # Safety
/// `dataset` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn distkm_dataset_free(dataset: *mut DistkmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Append one observation. A NaN value records a missing measurement.
///
/// # Safety
/// `dataset` must be a live handle and `subject` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn distkm_dataset_push(
    dataset: *mut DistkmDataset,
    subject: *const c_char,
    time: u32,
    value: f64,
) -> DistkmStatus {
    guard(|| {
        let (Some(ds), false) = (dataset.as_mut(), subject.is_null()) else {
            return fail(DistkmStatus::NullPointer, "dataset or subject is NULL");
        };
        let Ok(id) = CStr::from_ptr(subject).to_str() else {
            return fail(DistkmStatus::InvalidArgument, "subject is not valid UTF-8");
        };
        if time == 0 {
            return fail(DistkmStatus::InvalidArgument, "time indices start at 1");
        }
        if value.is_infinite() {
            return fail(DistkmStatus::InvalidArgument, "value is infinite");
        }
        ds.records.push((id.to_string(), time, (!value.is_nan()).then_some(value)));
        DistkmStatus::Ok
    })
}

/// Number of records held; values missing in a loaded file are not stored.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn distkm_dataset_len(dataset: *const DistkmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.records.len())
}

/// Load a long-format CSV with columns `subject`, `time`, `value` into a new dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distkm_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut DistkmDataset,
) -> DistkmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(DistkmStatus::NullPointer, "path or out is NULL");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(DistkmStatus::InvalidArgument, "path is not valid UTF-8");
        };
        from_result(dataio::load_long_csv(path, &CsvSchema::default()), |data| {
            let records = data.records().map(|(s, t, v)| (s.to_string(), t, Some(v))).collect();
            *out = Box::into_raw(Box::new(DistkmDataset { records }));
        })
    })
}

/// Defaults: cut-point 0, at least 20 observations per fit, 500 bootstrap
/// replicates, all standard errors, seed 1.
#[no_mangle]
pub extern "C" fn distkm_estimate_options_default() -> DistkmEstimateOptions {
    let d = EstimatorOptions::default();
    DistkmEstimateOptions {
        cutpoint: d.cutpoint,
        min_n_fit: d.min_n_fit,
        bootstrap_reps: d.bootstrap_reps,
        se_mode: DistkmSeMode::All,
        seed: 1,
        baseline_exclusion: false,
        allow_late_entry: false,
    }
}

fn prepared(ds: &DistkmDataset, o: &DistkmEstimateOptions) -> distkm::Result<(LongDataset, EstimatorOptions)> {
    if !o.cutpoint.is_finite() {
        return Err(Error::config("cutpoint", "must be finite"));
    }
    let data = LongDataset::from_records(ds.records.iter().cloned())?;
    let (data, _) = dataio::operationalize(
        &data,
        o.cutpoint,
        OperationalizeOptions {
            baseline_exclusion: o.baseline_exclusion,
            allow_late_entry: o.allow_late_entry,
        },
    );
    let opts = EstimatorOptions {
        cutpoint: o.cutpoint,
        min_n_fit: o.min_n_fit,
        bootstrap_reps: o.bootstrap_reps,
        se_mode: match o.se_mode {
            DistkmSeMode::PaperDelta => SeMode::PaperDelta,
            DistkmSeMode::FullDelta => SeMode::FullDelta,
            DistkmSeMode::Bootstrap => SeMode::Bootstrap,
            DistkmSeMode::All => SeMode::All,
        },
        seed: o.seed,
        skip_baseline: o.baseline_exclusion,
        ..Default::default()
    };
    Ok((data, opts))
}

/// Distributional Kaplan-Meier curve. Release the result with [`distkm_curve_free`].
///
/// # Safety
/// `dataset` must be a live handle, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn distkm_estimate_dkm(
    dataset: *const DistkmDataset,
    options: *const DistkmEstimateOptions,
    out: *mut *mut DistkmCurve,
) -> DistkmStatus {
    guard(|| {
        let (Some(ds), Some(o), false) = (dataset.as_ref(), options.as_ref(), out.is_null()) else {
            return fail(DistkmStatus::NullPointer, "dataset, options or out is NULL");
        };
        *out = ptr::null_mut();
        let curve = prepared(ds, o).and_then(|(data, opts)| survival::dkm_curve(&data, &opts));
        from_result(curve, |curve| *out = Box::into_raw(Box::new(DistkmCurve { curve })))
    })
}

/// Classical Kaplan-Meier curve at `options.cutpoint`; only the cut-point and
/// the operationalisation flags are used.
///
/// # Safety
/// `dataset` must be a live handle, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn distkm_estimate_km(
    dataset: *const DistkmDataset,
    options: *const DistkmEstimateOptions,
    out: *mut *mut DistkmCurve,
) -> DistkmStatus {
    guard(|| {
        let (Some(ds), Some(o), false) = (dataset.as_ref(), options.as_ref(), out.is_null()) else {
            return fail(DistkmStatus::NullPointer, "dataset, options or out is NULL");
        };
        *out = ptr::null_mut();
        let curve = prepared(ds, o).and_then(|(data, opts)| {
            let sets = survival::build_risk_sets(&data, opts.cutpoint)?;
            let first = if opts.skip_baseline { 2 } else { 1 };
            Ok(survival::km_from_risk_sets(&sets, opts.cutpoint, first))
        });
        from_result(curve, |curve| *out = Box::into_raw(Box::new(DistkmCurve { curve })))
    })
}

/// Number of time points in a curve.
///
/// # Safety
/// `curve` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn distkm_curve_len(curve: *const DistkmCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.curve.points.len())
}

/// Copy time point `index` (0-based) into `out`.
///
/// # Safety
/// `curve` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distkm_curve_point(
    curve: *const DistkmCurve,
    index: usize,
    out: *mut DistkmPoint,
) -> DistkmStatus {
    guard(|| {
        let (Some(c), Some(out)) = (curve.as_ref(), out.as_mut()) else {
            return fail(DistkmStatus::NullPointer, "curve or out is NULL");
        };
        let Some(p) = c.curve.points.get(index) else {
            return fail(
                DistkmStatus::InvalidArgument,
                format!("index {index} out of range for {} points", c.curve.points.len()),
            );
        };
        *out = DistkmPoint {
            time: p.time,
            n_risk: p.n_risk,
            n_event: p.n_event,
            n_est: p.n_est,
            estimable: p.estimable,
            p_hat: nan_or(p.p_hat),
            s_hat: nan_or(p.s_hat),
            se_dist: nan_or(p.se_dist),
            se_boot: nan_or(p.se_boot),
        };
        DistkmStatus::Ok
    })
}

/// Release a curve. NULL is ignored.
///
/// # Safety
/// `curve` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn distkm_curve_free(curve: *mut DistkmCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Owen's T function T(h, a).
#[no_mangle]
pub extern "C" fn distkm_owen_t(h: f64, a: f64) -> f64 {
    special::owen_t(h, a)
}

/// Skew-normal CDF; NaN if `scale` is not positive.
#[no_mangle]
pub extern "C" fn distkm_sn_cdf(x: f64, location: f64, scale: f64, shape: f64) -> f64 {
    if scale.is_nan() || scale <= 0.0 {
        return f64::NAN;
    }
    skewnormal::sn_cdf(x, &SnParams::new(location, scale, shape))
}

/// Maximum-likelihood skew-normal fit of `n` values.
///
/// # Safety
/// `values` must point to `n` readable doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn distkm_sn_fit(values: *const f64, n: usize, out: *mut DistkmSnFit) -> DistkmStatus {
    guard(|| {
        let (false, Some(out)) = (values.is_null(), out.as_mut()) else {
            return fail(DistkmStatus::NullPointer, "values or out is NULL");
        };
        let xs = std::slice::from_raw_parts(values, n);
        let opts = FitOptions {
            compute_information: false,
            ..Default::default()
        };
        from_result(skewnormal::fit_sn(xs, &opts), |fit| {
            let p = fit.params;
            *out = DistkmSnFit {
                location: p.location,
                scale: p.scale,
                shape: p.shape,
                loglik: p.loglik,
                n_fit: p.n_fit,
                converged: p.converged,
                fallback: p.fallback,
            };
        })
    })
}
