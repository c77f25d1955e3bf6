//! C ABI over `evolvebm`.
//!
//! Families are opaque handles created from a JSON spec and released with
//! [`ebm_family_free`]. Every function returns an [`EbmStatus`]; on failure
//! [`ebm_last_error`] describes what went wrong on the calling thread.
//! Points and paths are row-major `(n + 1) × d` arrays on the uniform grid
//! `t_k = k/n`; matrices are column-major `d × d`. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use evolvebm::action::{action_manifold, minimize_action};
use evolvebm::framebundle::{antidevelop, horizontal_lift, Frame, Path};
use evolvebm::geometry::FamilySpec;
use evolvebm::ldp::tube_probability;
use evolvebm::sampler::Simulator;
use evolvebm::{ChartPoint, Error, MetricFamily};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    OutOfChart = 3,
    Numerical = 4,
    Panic = 5,
}

/// Opaque metric family.
pub struct EbmFamily {
    inner: MetricFamily,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

struct Failure(EbmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::OutOfChart { .. } => EbmStatus::OutOfChart,
            ref e if e.is_numerical() => EbmStatus::Numerical,
            _ => EbmStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EbmStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EbmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EbmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            EbmStatus::Panic
        }
    }
}

unsafe fn family<'a>(fam: *const EbmFamily) -> Result<&'a MetricFamily, Failure> {
    fam.as_ref().map(|f| &f.inner).ok_or_else(|| null("family"))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn scalar_out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn read_path(points: *const f64, n_points: usize, d: usize) -> Result<Path, Failure> {
    if n_points < 2 {
        return Err(Failure(EbmStatus::InvalidInput, "a path needs at least two points".into()));
    }
    let flat = input(points, n_points * d, "points")?;
    Ok(Path::new(flat.chunks(d).map(|c| ChartPoint(c.to_vec())).collect())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ebm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failing call on this thread (empty after success).
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ebm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a family from `{"family": id, "params": {...}, "dim": d}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ebm_family_new(spec_json: *const c_char, out: *mut *mut EbmFamily) -> EbmStatus {
    guard(|| {
        let out = scalar_out(out, "out")?;
        *out = std::ptr::null_mut();
        if spec_json.is_null() {
            return Err(null("spec_json"));
        }
        let text = CStr::from_ptr(spec_json)
            .to_str()
            .map_err(|e| Failure(EbmStatus::InvalidInput, format!("spec is not UTF-8: {e}")))?;
        let spec: FamilySpec =
            serde_json::from_str(text).map_err(|e| Failure(EbmStatus::InvalidInput, format!("bad family spec: {e}")))?;
        let inner = MetricFamily::from_spec(&spec)?;
        *out = Box::into_raw(Box::new(EbmFamily { inner }));
        Ok(())
    })
}

/// Releases a family. Null is ignored.
///
/// # Safety
/// `fam` must come from [`ebm_family_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebm_family_free(fam: *mut EbmFamily) {
    if !fam.is_null() {
        drop(Box::from_raw(fam));
    }
}

/// Chart dimension, or 0 for a null handle.
///
/// # Safety
/// `fam` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ebm_family_dim(fam: *const EbmFamily) -> usize {
    fam.as_ref().map_or(0, |f| f.inner.dim())
}

/// `g(t, x)` into `out` (`d × d`).
///
/// # Safety
/// `x` holds `d` values and `out` has room for `d²`.
#[no_mangle]
pub unsafe extern "C" fn ebm_metric_eval(fam: *const EbmFamily, t: f64, x: *const f64, out: *mut f64) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        let g = fam.metric_eval(t, input(x, d, "x")?)?;
        output(out, d * d, "out")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// `∂ₜg(t, x)` into `out` (`d × d`).
///
/// # Safety
/// As for [`ebm_metric_eval`].
#[no_mangle]
pub unsafe extern "C" fn ebm_metric_dt(fam: *const EbmFamily, t: f64, x: *const f64, out: *mut f64) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        let g = fam.metric_dt(t, input(x, d, "x")?)?;
        output(out, d * d, "out")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// `Γᵏᵢⱼ(t, x)` into `out[k·d² + i·d + j]`.
///
/// # Safety
/// `x` holds `d` values and `out` has room for `d³`.
#[no_mangle]
pub unsafe extern "C" fn ebm_christoffel(fam: *const EbmFamily, t: f64, x: *const f64, out: *mut f64) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        let c = fam.christoffel(t, input(x, d, "x")?)?;
        let out = output(out, d * d * d, "out")?;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    out[k * d * d + i * d + j] = c.get(k, i, j);
                }
            }
        }
        Ok(())
    })
}

/// Length of the straight chart segment from `x` to `y` in `g(t)`.
///
/// # Safety
/// `x` and `y` hold `d` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ebm_chart_distance(
    fam: *const EbmFamily,
    t: f64,
    x: *const f64,
    y: *const f64,
    out: *mut f64,
) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        *scalar_out(out, "out")? = fam.chart_distance(t, input(x, d, "x")?, input(y, d, "y")?)?;
        Ok(())
    })
}

/// Discrete action of a path. `*finite` is set to 0 and `*out` to +∞ when
/// the action is infinite.
///
/// # Safety
/// `points` holds `n_points · d` values; `out` and `finite` are writable.
#[no_mangle]
pub unsafe extern "C" fn ebm_action_manifold(
    fam: *const EbmFamily,
    points: *const f64,
    n_points: usize,
    out: *mut f64,
    finite: *mut c_int,
) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let path = read_path(points, n_points, fam.dim())?;
        let a = action_manifold(fam, &path)?.value;
        *scalar_out(out, "out")? = a.finite().unwrap_or(f64::INFINITY);
        *scalar_out(finite, "finite")? = a.finite().is_some() as c_int;
        Ok(())
    })
}

/// Action minimizer from `x0` to `x1` on `n` cells; writes `(n + 1) · d`
/// points. An unconverged run still writes its path and returns
/// `Numerical`.
///
/// # Safety
/// `x0`, `x1` hold `d` values; `out_points` has room for `(n + 1) · d`;
/// `out_action` and `converged` are writable.
#[no_mangle]
pub unsafe extern "C" fn ebm_minimize_action(
    fam: *const EbmFamily,
    x0: *const f64,
    x1: *const f64,
    n: usize,
    out_points: *mut f64,
    out_action: *mut f64,
    converged: *mut c_int,
) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        let r = minimize_action(fam, input(x0, d, "x0")?, input(x1, d, "x1")?, n, None)?;
        let out = output(out_points, (n + 1) * d, "out_points")?;
        for (dst, p) in out.chunks_mut(d).zip(r.path.points()) {
            dst.copy_from_slice(p);
        }
        *scalar_out(out_action, "out_action")? = r.action.value.finite().unwrap_or(f64::INFINITY);
        *scalar_out(converged, "converged")? = r.converged as c_int;
        if !r.converged {
            return Err(Error::NotConverged { iterations: r.iterations, gradient: r.gradient_norm }.into());
        }
        Ok(())
    })
}

/// Horizontal lift from the frame `e0` (`d × d`; null for the canonical
/// frame). Writes `n_points` frames, `d²` values each.
///
/// # Safety
/// `points` holds `n_points · d` values, `e0` is null or holds `d²`, and
/// `out_frames` has room for `n_points · d²`.
#[no_mangle]
pub unsafe extern "C" fn ebm_horizontal_lift(
    fam: *const EbmFamily,
    points: *const f64,
    n_points: usize,
    e0: *const f64,
    out_frames: *mut f64,
) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        let path = read_path(points, n_points, d)?;
        let u0 = if e0.is_null() {
            Frame::canonical(fam, 0.0, path.start())?
        } else {
            let basis = nalgebra::DMatrix::from_column_slice(d, d, input(e0, d * d, "e0")?);
            Frame::new(0.0, path.start().clone(), basis)?
        };
        let lifted = horizontal_lift(fam, &path, &u0)?;
        let out = output(out_frames, n_points * d * d, "out_frames")?;
        for (dst, f) in out.chunks_mut(d * d).zip(&lifted.frames) {
            dst.copy_from_slice(f.basis.as_slice());
        }
        Ok(())
    })
}

/// Anti-development from the canonical frame; writes `n_points · d`
/// control values.
///
/// # Safety
/// `points` holds `n_points · d` values and `out_control` has room for as
/// many.
#[no_mangle]
pub unsafe extern "C" fn ebm_antidevelop(
    fam: *const EbmFamily,
    points: *const f64,
    n_points: usize,
    out_control: *mut f64,
) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let d = fam.dim();
        let path = read_path(points, n_points, d)?;
        let u0 = Frame::canonical(fam, 0.0, path.start())?;
        let w = antidevelop(fam, &path, &u0)?;
        let out = output(out_control, n_points * d, "out_control")?;
        for (dst, v) in out.chunks_mut(d).zip(w.values()) {
            dst.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Monte Carlo probability that the process stays within `delta` of the
/// path on every grid time, with its standard error.
///
/// # Safety
/// `points` holds `n_points · d` values; `p_hat` and `se` are writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ebm_tube_probability(
    fam: *const EbmFamily,
    points: *const f64,
    n_points: usize,
    delta: f64,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    p_hat: *mut f64,
    se: *mut f64,
) -> EbmStatus {
    guard(|| {
        let fam = family(fam)?;
        let path = read_path(points, n_points, fam.dim())?;
        let est = tube_probability(fam, &path, delta, epsilon, n_samples, seed, Simulator::FrameBundle)?;
        *scalar_out(p_hat, "p_hat")? = est.p_hat;
        *scalar_out(se, "se")? = est.standard_error;
        Ok(())
    })
}
