//! C ABI over `noisy-gpr`.
//!
//! Datasets and fits are opaque handles created by `ngpr_*_new`-style calls
//! and released with the matching `*_free`. Every fallible call returns an
//! [`NgprStatus`]; on failure [`ngpr_last_error_message`] describes the
//! error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use noisy_gpr::data::read_dataset;
use noisy_gpr::detect::roc_auc;
use noisy_gpr::noiseopt::{joint_optimize, optimize_sigma};
use noisy_gpr::{Dataset, Error, GprState, Inputs, JointOptConfig, KernelParams, MultUpdateConfig, OptTrace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NgprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Numerical = 6,
    UndefinedMetric = 7,
    Panic = 8,
}

/// Optimizer and kernel settings. Non-positive kernel values select the
/// data-driven heuristic.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgprFitOptions {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub max_iters: usize,
    pub tol_sigma: f64,
    pub tol_nll: f64,
    pub penalty_lambda: f64,
    pub penalty_p: f64,
}

pub struct NgprDataset(Dataset);

pub struct NgprFit {
    kernel: KernelParams,
    trace: OptTrace,
    state: GprState<KernelParams>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NgprStatus {
    if e.is_numerical() {
        return NgprStatus::Numerical;
    }
    match e {
        Error::Io { .. } => NgprStatus::Io,
        Error::Parse { .. } | Error::EmptyDataset => NgprStatus::Parse,
        Error::Config(_) => NgprStatus::Config,
        Error::UndefinedMetric(_) => NgprStatus::UndefinedMetric,
        Error::Optimization { source, .. } | Error::Fold { source, .. } => status_of(source),
        Error::AllRestartsFailed { last, .. } => status_of(last),
        _ => NgprStatus::InvalidInput,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (NgprStatus, String)>) -> NgprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NgprStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NgprStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (NgprStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NgprStatus, String) {
    (NgprStatus::NullPointer, format!("{what} is null"))
}

fn kernel_for(data: &Dataset, o: &NgprFitOptions) -> Result<KernelParams, Error> {
    let h = KernelParams::heuristic(data.inputs(), data.labels());
    let sv = if o.signal_variance > 0.0 { o.signal_variance } else { h.signal_variance };
    let ls = if o.length_scale > 0.0 { o.length_scale } else { h.length_scale };
    KernelParams::new(sv, ls)
}

fn mult_config(o: &NgprFitOptions) -> MultUpdateConfig {
    MultUpdateConfig {
        max_iters: o.max_iters,
        tol_sigma: o.tol_sigma,
        tol_nll: o.tol_nll,
        penalty_lambda: o.penalty_lambda,
        penalty_p: o.penalty_p,
        ..Default::default()
    }
}

/// Library defaults: heuristic kernel, no penalty.
#[no_mangle]
pub extern "C" fn ngpr_fit_options_default() -> NgprFitOptions {
    let d = MultUpdateConfig::default();
    NgprFitOptions {
        signal_variance: 0.0,
        length_scale: 0.0,
        max_iters: d.max_iters,
        tol_sigma: d.tol_sigma,
        tol_nll: d.tol_nll,
        penalty_lambda: d.penalty_lambda,
        penalty_p: d.penalty_p,
    }
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ngpr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a dataset from row-major inputs `x` (`n × dim`) and labels `y`.
///
/// # Safety
/// `x` must point to `n * dim` doubles, `y` to `n` doubles and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ngpr_dataset_new(
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    out: *mut *mut NgprDataset,
) -> NgprStatus {
    guard(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let len = n.checked_mul(dim).ok_or((NgprStatus::InvalidInput, "n * dim overflows".to_string()))?;
        let xs = std::slice::from_raw_parts(x, len).to_vec();
        let ys = std::slice::from_raw_parts(y, n).to_vec();
        let data = Inputs::new(xs, dim).and_then(|i| Dataset::new(i, ys, None)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(NgprDataset(data)));
        Ok(())
    })
}

/// Reads a dataset CSV.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ngpr_dataset_read_csv(path: *const c_char, out: *mut *mut NgprDataset) -> NgprStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (NgprStatus::InvalidInput, "path is not UTF-8".to_string()))?;
        let data = read_dataset(Path::new(p)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(NgprDataset(data)));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ngpr_dataset_free(data: *mut NgprDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of labels, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ngpr_dataset_len(data: *const NgprDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

unsafe fn fit_with(
    data: *const NgprDataset,
    options: *const NgprFitOptions,
    out: *mut *mut NgprFit,
    run: impl FnOnce(&Dataset, &KernelParams, &MultUpdateConfig) -> Result<NgprFit, Error>,
) -> NgprStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("dataset"))?.0;
        let options = options.as_ref().copied().unwrap_or_else(|| ngpr_fit_options_default());
        if out.is_null() {
            return Err(null("out"));
        }
        let kernel = kernel_for(data, &options).map_err(lib_err)?;
        let fit = run(data, &kernel, &mult_config(&options)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(fit));
        Ok(())
    })
}

/// Fits the per-label noise at fixed kernel. `options` may be null for
/// defaults. A fit that stops at `max_iters` still succeeds; check
/// [`ngpr_fit_summary`].
///
/// # Safety
/// `data` must be a live handle, `options` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ngpr_optimize_sigma(
    data: *const NgprDataset,
    options: *const NgprFitOptions,
    out: *mut *mut NgprFit,
) -> NgprStatus {
    fit_with(data, options, out, |d, k, cfg| {
        let fit = optimize_sigma(k, d.inputs(), &d.centered_labels(), cfg)?;
        Ok(NgprFit {
            kernel: *k,
            trace: fit.trace,
            state: fit.state,
        })
    })
}

/// Fits noise and kernel jointly from `restarts` starting points around
/// the kernel in `options`.
///
/// # Safety
/// As [`ngpr_optimize_sigma`].
#[no_mangle]
pub unsafe extern "C" fn ngpr_joint_optimize(
    data: *const NgprDataset,
    options: *const NgprFitOptions,
    restarts: usize,
    seed: u64,
    out: *mut *mut NgprFit,
) -> NgprStatus {
    fit_with(data, options, out, |d, k, cfg| {
        let joint = JointOptConfig {
            restarts,
            restart_seed: seed,
            ..Default::default()
        };
        joint.validate()?;
        let fit = joint_optimize(k, d.inputs(), &d.centered_labels(), &joint, cfg)?;
        Ok(NgprFit {
            kernel: fit.kernel,
            trace: fit.trace,
            state: fit.state,
        })
    })
}

/// # Safety
/// `fit` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ngpr_fit_free(fit: *mut NgprFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

unsafe fn copy_out(src: impl ExactSizeIterator<Item = f64>, dst: *mut f64, len: usize) -> Result<(), (NgprStatus, String)> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len != src.len() {
        return Err((
            NgprStatus::InvalidInput,
            format!("buffer holds {len} values, fit has {}", src.len()),
        ));
    }
    for (i, v) in src.enumerate() {
        *dst.add(i) = v;
    }
    Ok(())
}

/// Copies the learned noise variances into `out` (`len` must equal N).
///
/// # Safety
/// `fit` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ngpr_fit_sigma(fit: *const NgprFit, out: *mut f64, len: usize) -> NgprStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_out(fit.state.sigma().as_slice().iter().copied(), out, len)
    })
}

/// Final objective, iteration count, convergence flag and kernel.
///
/// # Safety
/// `fit` must be a live handle; each output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn ngpr_fit_summary(
    fit: *const NgprFit,
    nll: *mut f64,
    iters: *mut usize,
    converged: *mut bool,
    signal_variance: *mut f64,
    length_scale: *mut f64,
) -> NgprStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if let Some(p) = nll.as_mut() {
            *p = fit.trace.final_nll();
        }
        if let Some(p) = iters.as_mut() {
            *p = fit.trace.iters;
        }
        if let Some(p) = converged.as_mut() {
            *p = fit.trace.converged;
        }
        if let Some(p) = signal_variance.as_mut() {
            *p = fit.kernel.signal_variance;
        }
        if let Some(p) = length_scale.as_mut() {
            *p = fit.kernel.length_scale;
        }
        Ok(())
    })
}

/// Closed-form leave-one-out errors and standard deviations of the fitted
/// model; both buffers hold `len` (= N) doubles.
///
/// # Safety
/// `fit` must be a live handle and both buffers writable.
#[no_mangle]
pub unsafe extern "C" fn ngpr_fit_loocv(fit: *const NgprFit, errors: *mut f64, stds: *mut f64, len: usize) -> NgprStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        let loo = fit.state.loocv();
        copy_out(loo.errors.iter().copied(), errors, len)?;
        copy_out(loo.stds.iter().copied(), stds, len)
    })
}

/// Area under the ROC curve of `scores` against `truth`, ties counting one
/// half.
///
/// # Safety
/// `scores` and `truth` must hold `n` elements and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ngpr_roc_auc(scores: *const f64, truth: *const bool, n: usize, out: *mut f64) -> NgprStatus {
    guard(|| {
        if scores.is_null() || truth.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let s = std::slice::from_raw_parts(scores, n);
        let t = std::slice::from_raw_parts(truth, n);
        *out = roc_auc(s, t).map_err(lib_err)?;
        Ok(())
    })
}
