//! C ABI for the ferrosaddle solver.
//!
//! Objects are opaque handles created by `fsd_*_new`/`fsd_solve` and released
//! with the matching `fsd_*_free`. Every function returns an [`FsdStatus`];
//! on failure a message is available from [`fsd_last_error`] on the same
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ferrosaddle::config::RunConfig;
use ferrosaddle::functional::{eval_j, PhysicalParams};
use ferrosaddle::grid::{DensityField, DomainSpec, PotentialField};
use ferrosaddle::maglaw::MagnetizationLaw;
use ferrosaddle::saddle::{run_saddle, SaddleError, SaddleOptions, SaddleState};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The saddle iteration stopped without meeting its gap tolerance. The
    /// state is still returned.
    NotConverged = 3,
    Config = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Grid, law, constants and solver options.
pub struct FsdProblem {
    spec: DomainSpec,
    law: MagnetizationLaw,
    params: PhysicalParams,
    options: SaddleOptions,
}

/// Result of [`fsd_solve`].
pub struct FsdState {
    state: SaddleState,
}

/// Scalar summary of a state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsdBounds {
    pub lower: f64,
    pub upper: f64,
    pub certified_upper: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub sweeps: usize,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn guard(f: impl FnOnce() -> Result<FsdStatus, (FsdStatus, String)>) -> FsdStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            FsdStatus::Panic
        }
    }
}

fn invalid(e: impl ToString) -> (FsdStatus, String) {
    (FsdStatus::InvalidArgument, e.to_string())
}

fn null(name: &str) -> (FsdStatus, String) {
    (FsdStatus::NullPointer, format!("{name} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (FsdStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (FsdStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next `fsd_*` call on the same thread.
#[no_mangle]
pub extern "C" fn fsd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Two-dimensional problem on `(0, length) × (−1, 1)` with a linear law
/// `μ = mu` and default solver options. `p0` is the law's pressure constant.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fsd_problem_new_linear_2d(
    length: f64,
    n_x: usize,
    n_z: usize,
    mu: f64,
    b: f64,
    tau: f64,
    mu_drive: f64,
    out: *mut *mut FsdProblem,
) -> FsdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = DomainSpec::two_d(length, n_x, n_z).map_err(invalid)?;
        let law = MagnetizationLaw::linear(mu).map_err(invalid)?;
        let params = PhysicalParams::with_law_pressure(&law, b, tau, mu_drive).map_err(invalid)?;
        let problem = FsdProblem { spec, law, params, options: SaddleOptions::default() };
        *out = Box::into_raw(Box::new(problem));
        Ok(FsdStatus::Ok)
    })
}

/// Problem from configuration text (`key = value` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fsd_problem_from_config(text: *const c_char, out: *mut *mut FsdProblem) -> FsdStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(text).to_str().map_err(|e| (FsdStatus::Config, e.to_string()))?;
        let config = RunConfig::parse(text).map_err(|e| (FsdStatus::Config, e.to_string()))?;
        let config_err = |e: ferrosaddle::Error| (FsdStatus::Config, e.to_string());
        let spec = config.domain().map_err(config_err)?;
        let law = config.magnetization_law().map_err(config_err)?;
        let params = config.physical_params(&law).map_err(config_err)?;
        let options = config.saddle_options().map_err(config_err)?;
        *out = Box::into_raw(Box::new(FsdProblem { spec, law, params, options }));
        Ok(FsdStatus::Ok)
    })
}

/// # Safety
/// `problem` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsd_problem_free(problem: *mut FsdProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of potential nodes, density cells and interface columns.
///
/// # Safety
/// `problem` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn fsd_problem_sizes(
    problem: *const FsdProblem,
    n_nodes: *mut usize,
    n_cells: *mut usize,
    n_columns: *mut usize,
) -> FsdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        for (ptr, v) in [(n_nodes, p.spec.n_nodes()), (n_cells, p.spec.n_cells()), (n_columns, p.spec.n_columns())] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        Ok(FsdStatus::Ok)
    })
}

/// Sets the gap tolerance and sweep limit of the saddle iteration.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsd_problem_set_saddle(problem: *mut FsdProblem, tol_gap: f64, max_sweeps: usize) -> FsdStatus {
    guard(|| {
        let p = problem.as_mut().ok_or_else(|| null("problem"))?;
        if !(tol_gap > 0.0 && tol_gap.is_finite()) || max_sweeps == 0 {
            return Err(invalid(format!("tol_gap = {tol_gap}, max_sweeps = {max_sweeps}")));
        }
        p.options.tol_gap = tol_gap;
        p.options.max_sweeps = max_sweeps;
        Ok(FsdStatus::Ok)
    })
}

/// `J(u, ρ)` for node values `u` and cell densities `rho`.
///
/// # Safety
/// `u` and `rho` must point to `n_u` and `n_rho` readable doubles and `out`
/// to one writable double.
#[no_mangle]
pub unsafe extern "C" fn fsd_eval_j(
    problem: *const FsdProblem,
    u: *const f64,
    n_u: usize,
    rho: *const f64,
    n_rho: usize,
    out: *mut f64,
) -> FsdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let u = PotentialField::from_values(&p.spec, slice(u, n_u, "u")?.to_vec()).map_err(invalid)?;
        let rho = DensityField::from_values(slice(rho, n_rho, "rho")?.to_vec()).map_err(invalid)?;
        *out = eval_j(&p.spec, &p.law, &p.params, &u, &rho).map_err(invalid)?;
        Ok(FsdStatus::Ok)
    })
}

/// Runs the saddle iteration. On `Ok` and on `NotConverged` a state handle
/// is stored in `out`.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fsd_solve(problem: *const FsdProblem, out: *mut *mut FsdState) -> FsdStatus {
    guard(|| {
        let p = as_ref(problem, "problem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (state, status) = match run_saddle(&p.spec, &p.law, &p.params, &p.options) {
            Ok(s) => (s, FsdStatus::Ok),
            Err(SaddleError::NonConvergence(s)) => {
                set_error(format!("saddle iteration stopped with gap {:e}", s.gap));
                (*s, FsdStatus::NotConverged)
            }
            Err(e) => return Err(invalid(e)),
        };
        *out = Box::into_raw(Box::new(FsdState { state }));
        Ok(status)
    })
}

/// # Safety
/// `state` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsd_state_free(state: *mut FsdState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be a live handle and `out` a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsd_state_bounds(state: *const FsdState, out: *mut FsdBounds) -> FsdStatus {
    guard(|| {
        let s = &as_ref(state, "state")?.state;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = FsdBounds {
            lower: s.lower,
            upper: s.upper,
            certified_upper: s.certified_upper,
            gap: s.gap,
            relative_gap: s.relative_gap(),
            sweeps: s.history.len(),
            converged: s.converged,
        };
        Ok(FsdStatus::Ok)
    })
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<FsdStatus, (FsdStatus, String)> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < values.len() {
        return Err((FsdStatus::BufferTooSmall, format!("need {} entries, got {len}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(FsdStatus::Ok)
}

/// Which field of a state to copy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsdField {
    /// Potential of the reported pair, one value per node.
    Potential = 0,
    /// Indicator of the reported pair, one value per cell.
    Indicator = 1,
    /// Density iterate that produced the potential, one value per cell.
    Density = 2,
}

/// Copies a field of `state` into `buf` (row-major grid order).
///
/// # Safety
/// `state` must be a live handle and `buf` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn fsd_state_copy_field(state: *const FsdState, field: FsdField, buf: *mut f64, len: usize) -> FsdStatus {
    guard(|| {
        let s = &as_ref(state, "state")?.state;
        let values = match field {
            FsdField::Potential => s.u.as_slice(),
            FsdField::Indicator => s.chi.as_slice(),
            FsdField::Density => s.rho.as_slice(),
        };
        copy_out(values, buf, len)
    })
}
