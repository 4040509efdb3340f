//! C ABI over the `evplace` library.
//!
//! Objects cross the boundary as opaque handles created by `*_parse`,
//! `evp_forecast` or `evp_solve` and released with the matching `*_free`.
//! Every fallible call returns an [`EvpStatus`]; on failure the message is
//! kept per thread and can be read with [`evp_last_error`]. Panics never
//! unwind into the caller; they surface as `EVP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use evplace::forecast::{forecast_demand, tune_kappa, DemandForecast, SmoothingParam};
use evplace::grid::{distance_matrix, DemandHistory, GridSpec, InfrastructureState};
use evplace::optimizer::{solve_mip, CostParams, PlacementModel, PlacementSolution, SolveOptions};
use evplace::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    ShapeMismatch = 5,
    InsufficientHistory = 6,
    Infeasible = 7,
    NoSolution = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Parsed demand history (cells x years).
pub struct EvpHistory(DemandHistory);

/// Parsed supply points with their existing chargers.
pub struct EvpInfrastructure(InfrastructureState);

/// Predicted demand for a set of target years.
pub struct EvpForecast(DemandForecast);

/// Charger counts and bounds from one placement solve.
pub struct EvpSolution(PlacementSolution);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EvpSolveOptions {
    /// Relative gap at which the search stops.
    pub gap_tol: f64,
    pub time_limit_seconds: f64,
    /// Nonzero: evaluate search nodes one at a time for reproducible output.
    pub deterministic: u8,
    pub node_budget: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EvpSolutionSummary {
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub node_count: u64,
    pub wall_time_seconds: f64,
    pub supply_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> EvpStatus {
    match e {
        Error::Parse { .. } => EvpStatus::Parse,
        Error::InvalidGrid(_)
        | Error::InvalidHistory(_)
        | Error::InvalidInfrastructure(_)
        | Error::InfeasibleInfrastructure { .. }
        | Error::InvalidArgument(_) => EvpStatus::InvalidArgument,
        Error::ShapeMismatch(_) => EvpStatus::ShapeMismatch,
        Error::InsufficientHistory { .. } => EvpStatus::InsufficientHistory,
        Error::InfeasibleInstance { .. } | Error::InfeasibleRelaxation(_) | Error::CountsInfeasible { .. } => {
            EvpStatus::Infeasible
        }
        Error::NoIncumbent => EvpStatus::NoSolution,
        Error::Year { source, .. } => status_of(source),
        Error::Io { .. } => EvpStatus::InvalidArgument,
    }
}

struct Fail(EvpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EvpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EvpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EvpStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {m}"));
            EvpStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(EvpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes. Returns the full length including the NUL, so a
/// call with `cap = 0` sizes the buffer.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null when `cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn evp_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if cap > 0 && !buf.is_null() {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn evp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `csv` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evp_history_parse(csv: *const c_char, out: *mut *mut EvpHistory) -> EvpStatus {
    guard(|| {
        let h = DemandHistory::parse_csv(text(csv, "csv")?)?;
        emit(out, EvpHistory(h))
    })
}

/// # Safety
/// `h` must come from [`evp_history_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evp_history_free(h: *mut EvpHistory) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Writes grid width, height and number of history years.
///
/// # Safety
/// `h` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn evp_history_shape(
    h: *const EvpHistory,
    width: *mut usize,
    height: *mut usize,
    years: *mut usize,
) -> EvpStatus {
    guard(|| {
        let h = &handle(h, "history")?.0;
        if width.is_null() || height.is_null() || years.is_null() {
            return Err(null("output"));
        }
        *width = h.grid().width();
        *height = h.grid().height();
        *years = h.years().len();
        Ok(())
    })
}

/// # Safety
/// `csv` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evp_infrastructure_parse(csv: *const c_char, out: *mut *mut EvpInfrastructure) -> EvpStatus {
    guard(|| {
        let s = InfrastructureState::parse_csv(text(csv, "csv")?)?;
        emit(out, EvpInfrastructure(s))
    })
}

/// # Safety
/// `s` must come from [`evp_infrastructure_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evp_infrastructure_free(s: *mut EvpInfrastructure) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of supply points, or 0 for a null handle.
///
/// # Safety
/// `s` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn evp_infrastructure_len(s: *const EvpInfrastructure) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Selects the smoothing exponent from `grid` by hold-out error on the last
/// history year.
///
/// # Safety
/// `h` must be a live handle; `grid` must hold `len` values; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn evp_tune_kappa(
    h: *const EvpHistory,
    grid: *const f64,
    len: usize,
    best_kappa: *mut f64,
    best_mse: *mut f64,
) -> EvpStatus {
    guard(|| {
        let h = &handle(h, "history")?.0;
        let g = slice(grid, len, "grid")?;
        if best_kappa.is_null() || best_mse.is_null() {
            return Err(null("output"));
        }
        let s = tune_kappa(h, g)?;
        *best_kappa = s.best.kappa();
        *best_mse = s.best_mse;
        Ok(())
    })
}

/// # Safety
/// `h` must be a live handle; `years` must hold `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn evp_forecast(
    h: *const EvpHistory,
    kappa: f64,
    years: *const i32,
    len: usize,
    out: *mut *mut EvpForecast,
) -> EvpStatus {
    guard(|| {
        let h = &handle(h, "history")?.0;
        let y = slice(years, len, "years")?;
        let f = forecast_demand(h, SmoothingParam::new(kappa)?, y)?;
        emit(out, EvpForecast(f))
    })
}

/// Copies predictions for target year index `k` into `values`, which must
/// hold one entry per grid cell.
///
/// # Safety
/// `f` must be a live handle; `values` must be writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn evp_forecast_column(f: *const EvpForecast, k: usize, values: *mut f64, len: usize) -> EvpStatus {
    guard(|| {
        let f = &handle(f, "forecast")?.0;
        if k >= f.target_years.len() {
            return Err(Fail(EvpStatus::OutOfRange, format!("year index {k} of {}", f.target_years.len())));
        }
        if len != f.predicted.len() {
            return Err(Fail(EvpStatus::ShapeMismatch, format!("buffer of {len} for {} cells", f.predicted.len())));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        for (i, row) in f.predicted.iter().enumerate() {
            *values.add(i) = row[k];
        }
        Ok(())
    })
}

/// # Safety
/// `f` must come from [`evp_forecast`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evp_forecast_free(f: *mut EvpForecast) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

#[no_mangle]
pub extern "C" fn evp_solve_options_default() -> EvpSolveOptions {
    let d = SolveOptions::default();
    EvpSolveOptions {
        gap_tol: d.gap_tol,
        time_limit_seconds: d.time_limit.as_secs_f64(),
        deterministic: d.deterministic as u8,
        node_budget: d.node_budget,
    }
}

/// Places chargers for one year of demand on a `width x height` grid with the
/// default cost parameters.
///
/// # Safety
/// `demand` must hold `len` values; `infra` must be a live handle;
/// `options` may be null for defaults; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evp_solve(
    width: usize,
    height: usize,
    demand: *const f64,
    len: usize,
    infra: *const EvpInfrastructure,
    options: *const EvpSolveOptions,
    out: *mut *mut EvpSolution,
) -> EvpStatus {
    guard(|| {
        let grid = GridSpec::new(width, height)?;
        let d = slice(demand, len, "demand")?;
        let s = &handle(infra, "infrastructure")?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| evp_solve_options_default());
        if !(o.time_limit_seconds > 0.0 && o.time_limit_seconds.is_finite()) {
            return Err(Fail(EvpStatus::InvalidArgument, "time limit must be positive".into()));
        }
        if !(o.gap_tol > 0.0 && o.gap_tol.is_finite()) {
            return Err(Fail(EvpStatus::InvalidArgument, "gap tolerance must be positive".into()));
        }
        let opts = SolveOptions {
            gap_tol: o.gap_tol,
            time_limit: Duration::from_secs_f64(o.time_limit_seconds),
            deterministic: o.deterministic != 0,
            node_budget: o.node_budget,
        };
        let model = PlacementModel::new(distance_matrix(grid, s), d.to_vec(), s.clone(), CostParams::default())?;
        emit(out, EvpSolution(solve_mip(&model, &opts)?))
    })
}

/// # Safety
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evp_solution_summary(s: *const EvpSolution, out: *mut EvpSolutionSummary) -> EvpStatus {
    guard(|| {
        let s = &handle(s, "solution")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = EvpSolutionSummary {
            objective: s.objective,
            lower_bound: s.lower_bound,
            gap: s.gap,
            node_count: s.node_count,
            wall_time_seconds: s.wall_time.as_secs_f64(),
            supply_count: s.n_scs.len(),
        };
        Ok(())
    })
}

/// Copies slow and fast charger counts per supply point.
///
/// # Safety
/// `s` must be a live handle; `scs` and `fcs` must be writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn evp_solution_counts(s: *const EvpSolution, scs: *mut u32, fcs: *mut u32, len: usize) -> EvpStatus {
    guard(|| {
        let s = &handle(s, "solution")?.0;
        if len != s.n_scs.len() {
            return Err(Fail(EvpStatus::ShapeMismatch, format!("buffer of {len} for {} supply points", s.n_scs.len())));
        }
        if scs.is_null() || fcs.is_null() {
            return Err(null("output"));
        }
        ptr::copy_nonoverlapping(s.n_scs.as_ptr(), scs, len);
        ptr::copy_nonoverlapping(s.n_fcs.as_ptr(), fcs, len);
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`evp_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evp_solution_free(s: *mut EvpSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
