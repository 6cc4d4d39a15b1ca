//! C ABI over `densmon`. Objects cross the boundary as opaque handles that the
//! caller frees with the matching `*_free`. Every fallible call returns a
//! status code; `densmon_last_error` gives the message of the last failure on
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use densmon::cli::{parse_config, run, RunConfig};
use densmon::kde::{estimate_density, ise, select_bandwidth, Density, GridSpec, Sample, DEFAULT_GRID_POINTS};
use densmon::normalizer::{fit_linear, fit_nonlinear, predict_sample_size, predict_score, FitModel, FitPoints, SizeBounds};
use densmon::scoring::expected_score;
use densmon::TaskId;

pub const DENSMON_OK: i32 = 0;
pub const DENSMON_ERR_NULL: i32 = -1;
pub const DENSMON_ERR_INVALID: i32 = -2;
pub const DENSMON_ERR_ESTIMATION: i32 = -3;
pub const DENSMON_ERR_CONFIG: i32 = -4;
pub const DENSMON_ERR_IO: i32 = -5;
pub const DENSMON_ERR_BUFFER: i32 = -6;
pub const DENSMON_ERR_PANIC: i32 = -99;

/// A density estimate on a uniform grid.
pub struct DensmonDensity(Density);

/// A parsed run configuration.
pub struct DensmonConfig(RunConfig);

/// Learning-curve fit `S(n) = qs_opt - c * n^(-r)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensmonFit {
    pub qs_opt: f64,
    pub c: f64,
    pub r: f64,
    pub residual: f64,
}

impl From<FitModel> for DensmonFit {
    fn from(m: FitModel) -> Self {
        DensmonFit {
            qs_opt: m.qs_opt,
            c: m.c,
            r: m.r,
            residual: m.residual,
        }
    }
}

impl From<DensmonFit> for FitModel {
    fn from(f: DensmonFit) -> Self {
        FitModel {
            qs_opt: f.qs_opt,
            c: f.c,
            r: f.r,
            residual: f.residual,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(i32, String);

fn fail(code: i32, message: impl ToString) -> Failure {
    Failure(code, message.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let message = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(fail(DENSMON_ERR_PANIC, message))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            DENSMON_OK
        }
        Err(Failure(code, message)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = message);
            code
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DENSMON_ERR_NULL, "null array"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(DENSMON_ERR_NULL, "null handle"))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(DENSMON_ERR_NULL, "null output pointer"))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(DENSMON_ERR_NULL, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(DENSMON_ERR_INVALID, format!("string is not UTF-8: {e}")))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string and returns its length without the terminator.
/// With a null or short buffer nothing is copied.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn densmon_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > msg.len() {
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, msg.len());
            *buf.add(msg.len()) = 0;
        }
        msg.len()
    })
}

/// Kernel density estimate of `values` with a data-driven bandwidth on the
/// default grid.
///
/// # Safety
/// `values` must be valid for `len` reads and `out_density` for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_density_estimate(
    values: *const f64,
    len: usize,
    out_density: *mut *mut DensmonDensity,
) -> i32 {
    guard(|| {
        let values = slice(values, len)?.to_vec();
        let target = out(out_density)?;
        let est = |e: densmon::kde::KdeError| fail(DENSMON_ERR_ESTIMATION, e);
        let sample = Sample::new(TaskId(0), values).map_err(est)?;
        let h = select_bandwidth(&sample).map_err(est)?.h;
        let grid = GridSpec::covering(&sample, h, DEFAULT_GRID_POINTS).map_err(est)?;
        let density = estimate_density(&sample, h, &grid).map_err(est)?;
        *target = Box::into_raw(Box::new(DensmonDensity(density)));
        Ok(())
    })
}

/// Density from `points` non-negative values sampled on `[lo, hi]`, rescaled
/// to integrate to one. `points` must be a power of two.
///
/// # Safety
/// `values` must be valid for `points` reads and `out_density` for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_density_from_values(
    lo: f64,
    hi: f64,
    values: *const f64,
    points: usize,
    out_density: *mut *mut DensmonDensity,
) -> i32 {
    guard(|| {
        let values = slice(values, points)?.to_vec();
        let target = out(out_density)?;
        let invalid = |e: densmon::kde::KdeError| fail(DENSMON_ERR_INVALID, e);
        let grid = GridSpec::new(lo, hi, points).map_err(invalid)?;
        let density = Density::from_values(grid, values, 1.0, 0).map_err(invalid)?;
        *target = Box::into_raw(Box::new(DensmonDensity(density)));
        Ok(())
    })
}

/// # Safety
/// `density` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn densmon_density_free(density: *mut DensmonDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

/// Grid bounds, point count and bandwidth of a density.
///
/// # Safety
/// `density` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn densmon_density_info(
    density: *const DensmonDensity,
    lo: *mut f64,
    hi: *mut f64,
    points: *mut usize,
    bandwidth: *mut f64,
) -> i32 {
    guard(|| {
        let d = &handle(density)?.0;
        if let Some(v) = lo.as_mut() {
            *v = d.grid().lo();
        }
        if let Some(v) = hi.as_mut() {
            *v = d.grid().hi();
        }
        if let Some(v) = points.as_mut() {
            *v = d.grid().points();
        }
        if let Some(v) = bandwidth.as_mut() {
            *v = d.bandwidth();
        }
        Ok(())
    })
}

/// Copies the grid values into `buf`, which must hold the point count.
///
/// # Safety
/// `density` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn densmon_density_values(density: *const DensmonDensity, buf: *mut f64, len: usize) -> i32 {
    guard(|| {
        let values = handle(density)?.0.values();
        if len < values.len() {
            return Err(fail(DENSMON_ERR_BUFFER, format!("buffer holds {len} values, need {}", values.len())));
        }
        if buf.is_null() {
            return Err(fail(DENSMON_ERR_NULL, "null buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        Ok(())
    })
}

/// Density at `x` by linear interpolation; zero off the grid.
///
/// # Safety
/// `density` must be a live handle and `result` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_density_evaluate(density: *const DensmonDensity, x: f64, result: *mut f64) -> i32 {
    guard(|| {
        *out(result)? = handle(density)?.0.evaluate(x);
        Ok(())
    })
}

/// Expected quadratic score of `estimate` under `truth`. Both must share a grid.
///
/// # Safety
/// Both handles must be live and `result` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_expected_score(
    estimate: *const DensmonDensity,
    truth: *const DensmonDensity,
    result: *mut f64,
) -> i32 {
    guard(|| {
        let s = expected_score(&handle(estimate)?.0, &handle(truth)?.0).map_err(|e| fail(DENSMON_ERR_INVALID, e))?;
        *out(result)? = s;
        Ok(())
    })
}

/// Integrated square error between two densities on the same grid.
///
/// # Safety
/// Both handles must be live and `result` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_ise(a: *const DensmonDensity, b: *const DensmonDensity, result: *mut f64) -> i32 {
    guard(|| {
        let e = ise(&handle(a)?.0, &handle(b)?.0).map_err(|e| fail(DENSMON_ERR_INVALID, e))?;
        *out(result)? = e;
        Ok(())
    })
}

unsafe fn fit_with(
    sizes: *const u64,
    scores: *const f64,
    len: usize,
    qs_max: f64,
    result: *mut DensmonFit,
    solve: fn(&FitPoints) -> Result<FitModel, densmon::normalizer::NormalizerError>,
) -> i32 {
    guard(|| {
        let points = FitPoints::new(slice(sizes, len)?.to_vec(), slice(scores, len)?.to_vec(), qs_max)
            .map_err(|e| fail(DENSMON_ERR_INVALID, e))?;
        let target = out(result)?;
        *target = solve(&points).map_err(|e| fail(DENSMON_ERR_INVALID, e))?.into();
        Ok(())
    })
}

/// Fits the learning curve with the fixed KDE rate `r = 0.8`, subject to
/// `qs_opt >= qs_max` and `c >= 0`.
///
/// # Safety
/// `sizes` and `scores` must be valid for `len` reads and `result` for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_fit_linear(
    sizes: *const u64,
    scores: *const f64,
    len: usize,
    qs_max: f64,
    result: *mut DensmonFit,
) -> i32 {
    fit_with(sizes, scores, len, qs_max, result, fit_linear)
}

/// As `densmon_fit_linear` with the rate `r` fitted too.
///
/// # Safety
/// `sizes` and `scores` must be valid for `len` reads and `result` for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_fit_nonlinear(
    sizes: *const u64,
    scores: *const f64,
    len: usize,
    qs_max: f64,
    result: *mut DensmonFit,
) -> i32 {
    fit_with(sizes, scores, len, qs_max, result, fit_nonlinear)
}

/// Predicted accuracy of an estimate from `n` samples.
///
/// # Safety
/// `fit` must be valid for one read and `result` for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_predict_score(fit: *const DensmonFit, n: u64, result: *mut f64) -> i32 {
    guard(|| {
        *out(result)? = predict_score(&(*handle(fit)?).into(), n);
        Ok(())
    })
}

/// Smallest sample size reaching `accuracy`, clamped to `[min, max]`.
///
/// # Safety
/// `fit` must be valid for one read and `result` for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_predict_sample_size(
    fit: *const DensmonFit,
    accuracy: f64,
    min: u64,
    max: u64,
    result: *mut u64,
) -> i32 {
    guard(|| {
        if min > max {
            return Err(fail(DENSMON_ERR_INVALID, format!("bounds [{min}, {max}] are empty")));
        }
        let n = predict_sample_size(&(*handle(fit)?).into(), accuracy, SizeBounds { min, max })
            .map_err(|e| fail(DENSMON_ERR_INVALID, e))?;
        *out(result)? = n;
        Ok(())
    })
}

/// Parses a run configuration document.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out_config` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_config_parse(source: *const c_char, out_config: *mut *mut DensmonConfig) -> i32 {
    guard(|| {
        let config = parse_config(text(source)?).map_err(|e| fail(DENSMON_ERR_CONFIG, e))?;
        *out(out_config)? = Box::into_raw(Box::new(DensmonConfig(config)));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn densmon_config_free(config: *mut DensmonConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Number of monitoring tasks in a configuration.
///
/// # Safety
/// `config` must be a live handle and `result` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn densmon_config_task_count(config: *const DensmonConfig, result: *mut usize) -> i32 {
    guard(|| {
        *out(result)? = handle(config)?.0.tasks.len();
        Ok(())
    })
}

/// Runs the monitoring loop and writes its output into `out_dir`. Relative
/// trace paths are resolved against `base_dir`. `steps` and `records` may be
/// null.
///
/// # Safety
/// `config` must be a live handle and both paths NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn densmon_run(
    config: *const DensmonConfig,
    base_dir: *const c_char,
    out_dir: *const c_char,
    steps: *mut u64,
    records: *mut usize,
) -> i32 {
    guard(|| {
        let config = &handle(config)?.0;
        let base = Path::new(text(base_dir)?);
        let out_dir = Path::new(text(out_dir)?);
        let summary = run(config, base, out_dir).map_err(|e| {
            let code = match e {
                densmon::cli::CliError::Config(_) => DENSMON_ERR_CONFIG,
                densmon::cli::CliError::Io(_) => DENSMON_ERR_IO,
                densmon::cli::CliError::Runtime(_) => DENSMON_ERR_ESTIMATION,
            };
            fail(code, e)
        })?;
        if let Some(s) = steps.as_mut() {
            *s = summary.steps;
        }
        if let Some(r) = records.as_mut() {
            *r = summary.records;
        }
        Ok(())
    })
}
