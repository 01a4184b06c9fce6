//! C ABI over the `fnar` library.
//!
//! Objects cross the boundary as opaque handles created by `fnar_*_new`-style
//! constructors and released with the matching `fnar_*_free`. Every function
//! returns an [`FnarStatus`]; on failure a message is kept per thread and can
//! be copied out with [`fnar_last_error`]. Panics never unwind into C: they
//! are caught and reported as [`FnarStatus::Panic`].

use std::cell::RefCell;
use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fnar::cli::parse_operator;
use fnar::estimator::{estimate, Estimator, FitOptions, GmmFit, MomentSpec};
use fnar::simulate::{simulate_mc_panel, McDesign};
use fnar::{BasisSystem, FnarError, FunctionOnGrid, FunctionalPanel, NetworkWeights, QuadratureGrid};
use libc::{c_char, c_int, size_t};

/// Result codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnarStatus {
    Ok = 0,
    InvalidArgument = 1,
    Domain = 2,
    IllConditionedBasis = 3,
    NonStationary = 4,
    CannotDifference = 5,
    Underidentified = 6,
    NumericalFailure = 7,
    VarianceUnavailable = 8,
    MissingData = 9,
    Harness = 10,
    Schema = 11,
    Io = 12,
    NullPointer = 13,
    Panic = 14,
}

/// Estimator selector for [`fnar_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnarEstimator {
    /// GMM with the inverse instrument second-moment block and identity on
    /// the quadratic moments.
    Gmm1 = 0,
    /// GMM with the identity weight.
    Gmm2 = 1,
    /// Linear moments only, closed form.
    TwoSls = 2,
}

/// Outcome curves and covariates of a balanced panel.
pub struct FnarPanel {
    inner: FunctionalPanel,
}

/// Row-normalized network weights.
pub struct FnarNetwork {
    inner: NetworkWeights,
}

/// A fitted model.
pub struct FnarFit {
    inner: GmmFit,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &FnarError) -> FnarStatus {
    match e {
        FnarError::InvalidArgument(_) => FnarStatus::InvalidArgument,
        FnarError::Domain(_) => FnarStatus::Domain,
        FnarError::IllConditionedBasis(_) => FnarStatus::IllConditionedBasis,
        FnarError::NonStationaryDgp(_) => FnarStatus::NonStationary,
        FnarError::CannotDifference(_) => FnarStatus::CannotDifference,
        FnarError::Underidentified { .. } => FnarStatus::Underidentified,
        FnarError::NumericalFailure(_) => FnarStatus::NumericalFailure,
        FnarError::VarianceUnavailable(_) => FnarStatus::VarianceUnavailable,
        FnarError::MissingData(_) => FnarStatus::MissingData,
        FnarError::Harness { .. } => FnarStatus::Harness,
        FnarError::Schema { .. } => FnarStatus::Schema,
        FnarError::Io { .. } => FnarStatus::Io,
    }
}

/// Internal failure: a library error or a bad pointer.
enum Fail {
    Lib(FnarError),
    Null(&'static str),
}

impl From<FnarError> for Fail {
    fn from(e: FnarError) -> Self {
        Fail::Lib(e)
    }
}

type Res<T> = std::result::Result<T, Fail>;

/// Run `f`, translating errors and panics into a status and message.
fn guard(f: impl FnOnce() -> Res<()>) -> FnarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FnarStatus::Ok
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FnarStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FnarStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Res<&'a T> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Res<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Res<()> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fnar_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fnar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Draw a panel from the simulation design with `n` units on a random
/// lattice, `t` periods and instrument strength `r`.
///
/// # Safety
/// `panel_out` and `network_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_simulate(
    n: size_t,
    t: size_t,
    r: f64,
    seed: u64,
    panel_out: *mut *mut FnarPanel,
    network_out: *mut *mut FnarNetwork,
) -> FnarStatus {
    guard(|| {
        if panel_out.is_null() || network_out.is_null() {
            return Err(Fail::Null("output handle"));
        }
        let (panel, cfg) = simulate_mc_panel(&McDesign::new(n, t, r), seed)?;
        write_out(panel_out, Box::into_raw(Box::new(FnarPanel { inner: panel })), "panel_out")?;
        write_out(
            network_out,
            Box::into_raw(Box::new(FnarNetwork { inner: cfg.weights })),
            "network_out",
        )
    })
}

/// Build a panel from flat arrays on an equally spaced grid of `grid_size`
/// interior nodes. `y` holds `n * t * grid_size` values indexed
/// `(period * n + unit) * grid_size + node`; `x` holds `n * t * dx` values
/// indexed `(period * n + unit) * dx + covariate`.
///
/// # Safety
/// `y` and `x` must point to arrays of the stated lengths; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_panel_new(
    n: size_t,
    t: size_t,
    dx: size_t,
    grid_size: size_t,
    y: *const f64,
    x: *const f64,
    out: *mut *mut FnarPanel,
) -> FnarStatus {
    guard(|| {
        let grid = QuadratureGrid::new(grid_size)?;
        let count = n.checked_mul(t).ok_or_else(|| FnarError::InvalidArgument("n * t overflows".into()))?;
        let ys = slice(y, count * grid_size, "y")?;
        let xs = slice(x, count * dx, "x")?;
        let curves = ys
            .chunks(grid_size)
            .map(|c| FunctionOnGrid::new(c.to_vec()))
            .collect::<fnar::Result<Vec<_>>>()?;
        let panel = FunctionalPanel::new(n, t, dx, grid, curves, xs.to_vec())?;
        write_out(out, Box::into_raw(Box::new(FnarPanel { inner: panel })), "out")
    })
}

/// Report the panel dimensions. Any output pointer may be null.
///
/// # Safety
/// `panel` must be a live handle; non-null outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_panel_dims(
    panel: *const FnarPanel,
    n: *mut size_t,
    t: *mut size_t,
    dx: *mut size_t,
    grid_size: *mut size_t,
) -> FnarStatus {
    guard(|| {
        let p = &deref(panel, "panel")?.inner;
        for (out, v) in [(n, p.n()), (t, p.t()), (dx, p.dx()), (grid_size, p.grid().len())] {
            if !out.is_null() {
                out.write(v);
            }
        }
        Ok(())
    })
}

/// Release a panel. Null is ignored.
///
/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fnar_panel_free(panel: *mut FnarPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Build row-normalized weights on `n` units from `count` directed edges
/// `from[k] -> to[k]` with raw weights `weight[k]`.
///
/// # Safety
/// `from`, `to` and `weight` must point to `count` elements; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_network_from_edges(
    n: size_t,
    count: size_t,
    from: *const size_t,
    to: *const size_t,
    weight: *const f64,
    out: *mut *mut FnarNetwork,
) -> FnarStatus {
    guard(|| {
        let (f, t, w) = (slice(from, count, "from")?, slice(to, count, "to")?, slice(weight, count, "weight")?);
        let entries: Vec<(usize, usize, f64)> = (0..count).map(|k| (f[k], t[k], w[k])).collect();
        let net = NetworkWeights::from_triplets(n, &entries)?;
        write_out(out, Box::into_raw(Box::new(FnarNetwork { inner: net })), "out")
    })
}

/// Number of units in a network.
///
/// # Safety
/// `network` must be a live handle and `n` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_network_units(network: *const FnarNetwork, n: *mut size_t) -> FnarStatus {
    guard(|| write_out(n, deref(network, "network")?.inner.n(), "n"))
}

/// Release a network. Null is ignored.
///
/// # Safety
/// `network` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fnar_network_free(network: *mut FnarNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Fit the model. `operator` is `"point-eval"`, `"epanechnikov"` or
/// `"past-window:WIDTH"`; the basis has `ktilde` inner knots and the given
/// spline degree; `moment_points` is `L`.
///
/// # Safety
/// `panel` and `network` must be live handles, `operator` a NUL-terminated
/// string and `out` valid for writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fnar_fit(
    panel: *const FnarPanel,
    network: *const FnarNetwork,
    operator: *const c_char,
    ktilde: size_t,
    degree: size_t,
    moment_points: size_t,
    estimator: FnarEstimator,
    out: *mut *mut FnarFit,
) -> FnarStatus {
    guard(|| {
        let p = &deref(panel, "panel")?.inner;
        let w = &deref(network, "network")?.inner;
        if operator.is_null() {
            return Err(Fail::Null("operator"));
        }
        let label = CStr::from_ptr(operator)
            .to_str()
            .map_err(|_| FnarError::InvalidArgument("operator label is not UTF-8".into()))?;
        let op = parse_operator(label, p.grid())?;
        let basis = BasisSystem::bspline(ktilde, degree, p.grid())?;
        let spec = MomentSpec::new(basis, moment_points, w)?;
        let est = match estimator {
            FnarEstimator::Gmm1 => Estimator::Gmm1,
            FnarEstimator::Gmm2 => Estimator::Gmm2,
            FnarEstimator::TwoSls => Estimator::TwoSls,
        };
        let fit = estimate(p, w, &op, &spec, est, &FitOptions::default())?;
        write_out(out, Box::into_raw(Box::new(FnarFit { inner: fit })), "out")
    })
}

/// Copy the coefficient vector into `buf` (capacity `len`) and report its
/// length in `count`. Pass a null `buf` to query the length only.
///
/// # Safety
/// `fit` must be a live handle, `count` valid for writes and `buf` null or
/// valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_fit_theta(fit: *const FnarFit, buf: *mut f64, len: size_t, count: *mut size_t) -> FnarStatus {
    guard(|| {
        let theta = &deref(fit, "fit")?.inner.theta;
        write_out(count, theta.len(), "count")?;
        if buf.is_null() {
            return Ok(());
        }
        if len < theta.len() {
            return Err(FnarError::InvalidArgument(format!("buffer holds {len} values, theta has {}", theta.len())).into());
        }
        ptr::copy_nonoverlapping(theta.as_ptr(), buf, theta.len());
        Ok(())
    })
}

/// Whether the optimizer met its convergence rule (1) or not (0).
///
/// # Safety
/// `fit` must be a live handle and `converged` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_fit_converged(fit: *const FnarFit, converged: *mut c_int) -> FnarStatus {
    guard(|| write_out(converged, deref(fit, "fit")?.inner.converged as c_int, "converged"))
}

/// Estimated interaction function at `s` in `[0, 1]`.
///
/// # Safety
/// `fit` must be a live handle and `value` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_fit_alpha_at(fit: *const FnarFit, s: f64, value: *mut f64) -> FnarStatus {
    guard(|| write_out(value, deref(fit, "fit")?.inner.alpha(s)?, "value"))
}

/// Estimated coefficient function of covariate `j` (0-based) at `s`.
///
/// # Safety
/// `fit` must be a live handle and `value` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_fit_beta_at(fit: *const FnarFit, j: size_t, s: f64, value: *mut f64) -> FnarStatus {
    guard(|| write_out(value, deref(fit, "fit")?.inner.beta(j, s)?, "value"))
}

/// Pointwise standard error of the interaction function at `s`.
///
/// # Safety
/// `fit` must be a live handle and `value` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fnar_fit_alpha_se_at(fit: *const FnarFit, s: f64, value: *mut f64) -> FnarStatus {
    guard(|| write_out(value, deref(fit, "fit")?.inner.se_alpha(s)?, "value"))
}

/// Release a fit. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fnar_fit_free(fit: *mut FnarFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
