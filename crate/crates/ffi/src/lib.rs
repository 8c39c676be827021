//! C ABI over the `semiheat` library.
//!
//! Every function returns a [`SemiheatStatus`]; results go through out
//! pointers. Handles are opaque and must be released with the matching
//! `*_free` function. The message of the last failure on the calling
//! thread is available from [`semiheat_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use semiheat::analysis::{classify, Verdict};
use semiheat::config::ExperimentConfig;
use semiheat::intersections::{count_intersections, IntersectOptions};
use semiheat::nonlinearity::{critical_exponents, eval_f_inverse, eval_f_transform, estimate_q, q_grid};
use semiheat::pde::{simulate, RunRecord};
use semiheat::steady::{shoot_regular, RadialProfile, ShootOptions};
use semiheat::{Error, Nonlinearity};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiheatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Spec = 4,
    Divergent = 5,
    Overflow = 6,
    Bracket = 7,
    NonConvergence = 8,
    Stability = 9,
    StepUnderflow = 10,
    OutOfRange = 11,
    InsufficientOverlap = 12,
    Indistinguishable = 13,
    ResolutionExhausted = 14,
    FitDegenerate = 15,
    Discretization = 16,
    Io = 17,
    BufferTooSmall = 18,
    Panic = 19,
}

impl From<&Error> for SemiheatStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => Self::Domain,
            Error::Spec(_) => Self::Spec,
            Error::Divergent(_) => Self::Divergent,
            Error::Overflow(_) => Self::Overflow,
            Error::Bracket(_) => Self::Bracket,
            Error::NonConvergence(_) => Self::NonConvergence,
            Error::Stability(_) => Self::Stability,
            Error::StepUnderflow { .. } => Self::StepUnderflow,
            Error::OutOfRange(_) => Self::OutOfRange,
            Error::InsufficientOverlap(_) => Self::InsufficientOverlap,
            Error::Indistinguishable => Self::Indistinguishable,
            Error::ResolutionExhausted(_) => Self::ResolutionExhausted,
            Error::FitDegenerate(_) => Self::FitDegenerate,
            Error::Discretization(_) => Self::Discretization,
            Error::Io(_) => Self::Io,
        }
    }
}

/// Blow-up verdict codes returned by [`semiheat_run_classify`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiheatVerdict {
    GlobalBounded = 0,
    TypeI = 1,
    TypeIISuspect = 2,
    Inconclusive = 3,
}

/// Opaque nonlinearity handle.
pub struct SemiheatNonlinearity {
    inner: Nonlinearity,
}

/// Opaque radial profile handle.
pub struct SemiheatProfile {
    inner: RadialProfile,
}

/// Opaque PDE run handle.
pub struct SemiheatRun {
    inner: RunRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), SemiheatStatus>) -> SemiheatStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SemiheatStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SemiheatStatus::Panic
        }
    }
}

fn fail(e: Error) -> SemiheatStatus {
    set_error(&e.to_string());
    SemiheatStatus::from(&e)
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, SemiheatStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(SemiheatStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        SemiheatStatus::InvalidUtf8
    })
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, SemiheatStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle");
        SemiheatStatus::NullPointer
    })
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, SemiheatStatus> {
    p.as_mut().ok_or_else(|| {
        set_error("null output pointer");
        SemiheatStatus::NullPointer
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn semiheat_status_name(status: SemiheatStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SemiheatStatus::Ok => b"ok\0",
        SemiheatStatus::NullPointer => b"null_pointer\0",
        SemiheatStatus::InvalidUtf8 => b"invalid_utf8\0",
        SemiheatStatus::Domain => b"domain\0",
        SemiheatStatus::Spec => b"spec\0",
        SemiheatStatus::Divergent => b"divergent\0",
        SemiheatStatus::Overflow => b"overflow\0",
        SemiheatStatus::Bracket => b"bracket\0",
        SemiheatStatus::NonConvergence => b"non_convergence\0",
        SemiheatStatus::Stability => b"stability\0",
        SemiheatStatus::StepUnderflow => b"step_underflow\0",
        SemiheatStatus::OutOfRange => b"out_of_range\0",
        SemiheatStatus::InsufficientOverlap => b"insufficient_overlap\0",
        SemiheatStatus::Indistinguishable => b"indistinguishable\0",
        SemiheatStatus::ResolutionExhausted => b"resolution_exhausted\0",
        SemiheatStatus::FitDegenerate => b"fit_degenerate\0",
        SemiheatStatus::Discretization => b"discretization\0",
        SemiheatStatus::Io => b"io\0",
        SemiheatStatus::BufferTooSmall => b"buffer_too_small\0",
        SemiheatStatus::Panic => b"panic\0",
    };
    s.as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn semiheat_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// `p_S, p_JL, q_S, q_JL` for dimension `n` written to `out[0..4]`
/// (infinity encodes an infinite exponent).
///
/// # Safety
/// `out` must point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn semiheat_critical_exponents(n: u32, out: *mut f64) -> SemiheatStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return Err(SemiheatStatus::NullPointer);
        }
        let e = critical_exponents(n).map_err(fail)?;
        let dst = std::slice::from_raw_parts_mut(out, 4);
        dst.copy_from_slice(&[e.p_s, e.p_jl, e.q_s, e.q_jl]);
        Ok(())
    })
}

/// Parses a nonlinearity spec such as `"power:p=3"` or `"exp"`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_nonlinearity_new(spec: *const c_char, out_nl: *mut *mut SemiheatNonlinearity) -> SemiheatStatus {
    guard(|| {
        let dst = out(out_nl)?;
        let nl: Nonlinearity = text(spec)?.parse().map_err(fail)?;
        *dst = Box::into_raw(Box::new(SemiheatNonlinearity { inner: nl }));
        Ok(())
    })
}

/// # Safety
/// `nl` must be null or a handle from [`semiheat_nonlinearity_new`].
#[no_mangle]
pub unsafe extern "C" fn semiheat_nonlinearity_free(nl: *mut SemiheatNonlinearity) {
    if !nl.is_null() {
        drop(Box::from_raw(nl));
    }
}

/// # Safety
/// `nl` must be a valid handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_f(nl: *const SemiheatNonlinearity, u: f64, value: *mut f64) -> SemiheatStatus {
    guard(|| {
        let nl = handle(nl)?;
        *out(value)? = nl.inner.f_checked(u).map_err(fail)?;
        Ok(())
    })
}

/// `F(u) = ∫_u^∞ dη / f(η)`.
///
/// # Safety
/// `nl` must be a valid handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_transform(nl: *const SemiheatNonlinearity, u: f64, tol: f64, value: *mut f64) -> SemiheatStatus {
    guard(|| {
        let nl = handle(nl)?;
        *out(value)? = eval_f_transform(&nl.inner, u, tol).map_err(fail)?;
        Ok(())
    })
}

/// `F⁻¹(v)`.
///
/// # Safety
/// `nl` must be a valid handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_transform_inverse(nl: *const SemiheatNonlinearity, v: f64, tol: f64, value: *mut f64) -> SemiheatStatus {
    guard(|| {
        let nl = handle(nl)?;
        *out(value)? = eval_f_inverse(&nl.inner, v, tol).map_err(fail)?;
        Ok(())
    })
}

/// Numerical estimate of `lim f'(u) F(u)` on a grid up to `u_max`.
///
/// # Safety
/// `nl` must be a valid handle and `q` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_estimate_q(nl: *const SemiheatNonlinearity, u_max: f64, tol: f64, q: *mut f64) -> SemiheatStatus {
    guard(|| {
        let nl = handle(nl)?;
        let dst = out(q)?;
        let est = estimate_q(&nl.inner, &q_grid(&nl.inner, u_max, 17), tol).map_err(fail)?;
        *dst = est.q;
        Ok(())
    })
}

/// Regular steady state with center value `alpha` on `[0, r_max]`. The
/// profile may end before `r_max` if it leaves the admissible range.
///
/// # Safety
/// `nl` must be a valid handle and `out_profile` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_shoot_regular(
    nl: *const SemiheatNonlinearity,
    n: u32,
    alpha: f64,
    r_max: f64,
    out_profile: *mut *mut SemiheatProfile,
) -> SemiheatStatus {
    guard(|| {
        let nl = handle(nl)?;
        let dst = out(out_profile)?;
        let (p, _) = shoot_regular(&nl.inner, n, alpha, r_max, &ShootOptions::default()).map_err(fail)?;
        *dst = Box::into_raw(Box::new(SemiheatProfile { inner: p }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a profile handle.
#[no_mangle]
pub unsafe extern "C" fn semiheat_profile_free(p: *mut SemiheatProfile) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of samples in the profile.
///
/// # Safety
/// `p` must be a valid handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_profile_len(p: *const SemiheatProfile, len: *mut usize) -> SemiheatStatus {
    guard(|| {
        *out(len)? = handle(p)?.inner.r.len();
        Ok(())
    })
}

/// Copies radii and values into caller buffers of capacity `cap`.
///
/// # Safety
/// `r` and `values` must each point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn semiheat_profile_copy(p: *const SemiheatProfile, r: *mut f64, values: *mut f64, cap: usize) -> SemiheatStatus {
    guard(|| {
        let p = &handle(p)?.inner;
        if r.is_null() || values.is_null() {
            set_error("null output buffer");
            return Err(SemiheatStatus::NullPointer);
        }
        if cap < p.r.len() {
            set_error(&format!("buffer holds {cap} values, profile has {}", p.r.len()));
            return Err(SemiheatStatus::BufferTooSmall);
        }
        std::slice::from_raw_parts_mut(r, p.r.len()).copy_from_slice(&p.r);
        std::slice::from_raw_parts_mut(values, p.r.len()).copy_from_slice(&p.values);
        Ok(())
    })
}

/// # Safety
/// `p` must be a valid handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_profile_eval(p: *const SemiheatProfile, r: f64, value: *mut f64) -> SemiheatStatus {
    guard(|| {
        let p = handle(p)?;
        *out(value)? = p.inner.eval(r).map_err(fail)?;
        Ok(())
    })
}

/// Number of sign changes of `a - b` on `(lo, hi]`.
///
/// # Safety
/// `a`, `b` must be valid handles and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_count_intersections(
    a: *const SemiheatProfile,
    b: *const SemiheatProfile,
    lo: f64,
    hi: f64,
    count: *mut usize,
) -> SemiheatStatus {
    guard(|| {
        let (a, b) = (handle(a)?, handle(b)?);
        let dst = out(count)?;
        let rep = count_intersections(&a.inner, &b.inner, (lo, hi), &IntersectOptions::default()).map_err(fail)?;
        *dst = rep.count;
        Ok(())
    })
}

/// Runs the PDE described by an INI or JSON configuration text.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out_run` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_simulate(config: *const c_char, out_run: *mut *mut SemiheatRun) -> SemiheatStatus {
    guard(|| {
        let dst = out(out_run)?;
        let cfg = ExperimentConfig::parse(text(config)?).map_err(fail)?;
        let nl = cfg.nonlinearity().map_err(fail)?;
        let grid = cfg.grid().map_err(fail)?;
        let (u0, natural_k) = cfg.initial_data().and_then(|d| d.sample(&nl, &grid)).map_err(fail)?;
        let k = cfg.k.or(natural_k).unwrap_or(u0[u0.len() - 1]);
        let run = simulate(&nl, &grid, &cfg.solver, &u0, k, &cfg.initial).map_err(fail)?;
        *dst = Box::into_raw(Box::new(SemiheatRun { inner: run }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a run handle.
#[no_mangle]
pub unsafe extern "C" fn semiheat_run_free(run: *mut SemiheatRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Snapshot count, final time and final maximum of a run.
///
/// # Safety
/// `run` must be a valid handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn semiheat_run_summary(
    run: *const SemiheatRun,
    snapshots: *mut usize,
    final_time: *mut f64,
    final_max: *mut f64,
) -> SemiheatStatus {
    guard(|| {
        let run = &handle(run)?.inner;
        let last = run.snapshots.last().expect("runs hold at least one snapshot");
        *out(snapshots)? = run.snapshots.len();
        *out(final_time)? = last.t;
        *out(final_max)? = last.max_value;
        Ok(())
    })
}

/// Estimated blow-up time from the final `F(M)`-decade.
///
/// # Safety
/// `run` must be a valid handle and `t_est` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_run_blowup_time(run: *const SemiheatRun, t_est: *mut f64) -> SemiheatStatus {
    guard(|| {
        let run = &handle(run)?.inner;
        let dst = out(t_est)?;
        *dst = run.estimate_blowup_time().map_err(fail)?.t_est;
        Ok(())
    })
}

/// Verdict with default classification thresholds.
///
/// # Safety
/// `run` must be a valid handle and `verdict` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semiheat_run_classify(run: *const SemiheatRun, verdict: *mut SemiheatVerdict) -> SemiheatStatus {
    guard(|| {
        let run = &handle(run)?.inner;
        let dst = out(verdict)?;
        let rep = classify(run, &run.nonlinearity, &Default::default());
        *dst = match rep.verdict {
            Verdict::GlobalBounded => SemiheatVerdict::GlobalBounded,
            Verdict::TypeI => SemiheatVerdict::TypeI,
            Verdict::TypeIISuspect => SemiheatVerdict::TypeIISuspect,
            Verdict::Inconclusive => SemiheatVerdict::Inconclusive,
        };
        Ok(())
    })
}
