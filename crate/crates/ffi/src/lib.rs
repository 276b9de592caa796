//! C ABI over the `rcmdp` library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns an
//! [`RcmdpStatus`]; on failure [`rcmdp_last_error_message`] describes the
//! error for the calling thread. Panics are caught and reported as
//! `RCMDP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rcmdp::envgen::{counterexample_with_threshold, random_instance, GenSpec, Setting};
use rcmdp::epigraph::{bisection_solve, delta_hat, BisectionConfig, SubroutineConfig};
use rcmdp::lp::solve_cmdp_lp;
use rcmdp::robust::{robust_eval, robust_values};
use rcmdp::{Error, Instance, Policy};

/// Opaque instance handle.
pub struct RcmdpInstance(Instance);

/// Opaque policy handle (`S x A`, row-major, rows on the simplex).
pub struct RcmdpPolicy(Policy);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcmdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInstance = 3,
    Numerical = 4,
    Infeasible = 5,
    Unsupported = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RcmdpStatus {
    match e {
        Error::InvalidArgument(_) | Error::CostIndexOutOfRange { .. } => RcmdpStatus::InvalidArgument,
        Error::InvalidInstance(_) => RcmdpStatus::InvalidInstance,
        Error::Singular { .. } | Error::NoConvergence { .. } => RcmdpStatus::Numerical,
        Error::Infeasible(_) => RcmdpStatus::Infeasible,
        Error::UnsupportedUncertainty(_) => RcmdpStatus::Unsupported,
        Error::Io(_) => RcmdpStatus::Io,
        Error::Parse(_) => RcmdpStatus::Parse,
    }
}

/// Runs `f`, recording errors and panics for [`rcmdp_last_error_message`].
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> RcmdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RcmdpStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RcmdpStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RcmdpStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live pointer from this library.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and nul-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure::Lib(Error::Parse(format!("{what} is not UTF-8: {e}"))))
}

fn out_ptr<T>(out: *mut *mut T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rcmdp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses an instance from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_instance_from_json(
    json: *const c_char,
    out: *mut *mut RcmdpInstance,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = unsafe { c_str(json, "json") }?;
        let inst = Instance::from_json(text)?;
        unsafe { *out = Box::into_raw(Box::new(RcmdpInstance(inst))) };
        Ok(())
    })
}

/// Generates a random instance with the default sizes of `setting`
/// (`"finite"`, `"kl"` or `"cmdp"`).
///
/// # Safety
/// `setting` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_instance_generate(
    setting: *const c_char,
    seed: u64,
    out: *mut *mut RcmdpInstance,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let setting: Setting = unsafe { c_str(setting, "setting") }?.parse()?;
        let inst = random_instance(&GenSpec::defaults(setting).with_seed(seed))?;
        unsafe { *out = Box::into_raw(Box::new(RcmdpInstance(inst))) };
        Ok(())
    })
}

/// The four-state two-kernel gradient-conflict instance with threshold `b1`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_instance_counterexample(
    gamma: f64,
    delta: f64,
    b1: f64,
    out: *mut *mut RcmdpInstance,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inst = counterexample_with_threshold(gamma, delta, b1)?;
        unsafe { *out = Box::into_raw(Box::new(RcmdpInstance(inst))) };
        Ok(())
    })
}

/// # Safety
/// `inst` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_instance_free(inst: *mut RcmdpInstance) {
    if !inst.is_null() {
        drop(unsafe { Box::from_raw(inst) });
    }
}

/// Writes the instance dimensions; any output pointer may be null.
///
/// # Safety
/// `inst` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_instance_dims(
    inst: *const RcmdpInstance,
    num_states: *mut usize,
    num_actions: *mut usize,
    num_costs: *mut usize,
    gamma: *mut f64,
) -> RcmdpStatus {
    guard(|| {
        let inst = &unsafe { deref(inst, "inst") }?.0;
        unsafe {
            if let Some(p) = num_states.as_mut() {
                *p = inst.num_states;
            }
            if let Some(p) = num_actions.as_mut() {
                *p = inst.num_actions;
            }
            if let Some(p) = num_costs.as_mut() {
                *p = inst.costs.len();
            }
            if let Some(p) = gamma.as_mut() {
                *p = inst.gamma;
            }
        }
        Ok(())
    })
}

/// Serializes the instance; release the string with [`rcmdp_string_free`].
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_instance_to_json(
    inst: *const RcmdpInstance,
    out: *mut *mut c_char,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inst = &unsafe { deref(inst, "inst") }?.0;
        let text = CString::new(inst.to_json()?).map_err(|e| Error::Parse(e.to_string()))?;
        unsafe { *out = text.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_policy_uniform(
    num_states: usize,
    num_actions: usize,
    out: *mut *mut RcmdpPolicy,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let p = Policy::uniform(num_states, num_actions)?;
        unsafe { *out = Box::into_raw(Box::new(RcmdpPolicy(p))) };
        Ok(())
    })
}

/// Builds a policy from `num_states * num_actions` row-major probabilities.
///
/// # Safety
/// `probs` must point to that many readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_policy_from_array(
    probs: *const f64,
    num_states: usize,
    num_actions: usize,
    out: *mut *mut RcmdpPolicy,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if probs.is_null() {
            return Err(Failure::Null("probs"));
        }
        let len = num_states
            .checked_mul(num_actions)
            .ok_or_else(|| Error::InvalidArgument("policy size overflows".into()))?;
        // SAFETY: the caller guarantees `len` readable values.
        let values = unsafe { std::slice::from_raw_parts(probs, len) }.to_vec();
        let arr = ndarray::Array2::from_shape_vec((num_states, num_actions), values)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let p = Policy::new(arr)?;
        unsafe { *out = Box::into_raw(Box::new(RcmdpPolicy(p))) };
        Ok(())
    })
}

/// Copies the probabilities row-major into `buf`, which must hold `S * A` values.
///
/// # Safety
/// `policy` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_policy_copy_to(
    policy: *const RcmdpPolicy,
    buf: *mut f64,
    len: usize,
) -> RcmdpStatus {
    guard(|| {
        let p = &unsafe { deref(policy, "policy") }?.0;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let n = p.num_states() * p.num_actions();
        if len < n {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, need {n}")).into());
        }
        // SAFETY: `buf` has room for `len >= n` doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(buf, n) };
        for (d, v) in dst.iter_mut().zip(p.probs().iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_policy_free(policy: *mut RcmdpPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Worst-case return of cost `n` (0 is the objective).
///
/// # Safety
/// Handles must be live; `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_robust_eval(
    inst: *const RcmdpInstance,
    policy: *const RcmdpPolicy,
    n: usize,
    value: *mut f64,
) -> RcmdpStatus {
    guard(|| {
        let inst = &unsafe { deref(inst, "inst") }?.0;
        let p = &unsafe { deref(policy, "policy") }?.0;
        if value.is_null() {
            return Err(Failure::Null("value"));
        }
        let v = robust_eval(inst, n, p)?.value;
        unsafe { *value = v };
        Ok(())
    })
}

/// Worst-case returns of all `N + 1` costs written to `out[0..len]`.
///
/// # Safety
/// Handles must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_robust_values(
    inst: *const RcmdpInstance,
    policy: *const RcmdpPolicy,
    out: *mut f64,
    len: usize,
) -> RcmdpStatus {
    guard(|| {
        let inst = &unsafe { deref(inst, "inst") }?.0;
        let p = &unsafe { deref(policy, "policy") }?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let v = robust_values(inst, p)?;
        if len < v.len() {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {len} values, need {}",
                v.len()
            ))
            .into());
        }
        // SAFETY: `out` has room for `len >= v.len()` doubles.
        unsafe { std::slice::from_raw_parts_mut(out, v.len()) }.copy_from_slice(&v);
        Ok(())
    })
}

/// `max_n J_n - b_n` with `b0` for the objective, and the maximizing index.
///
/// # Safety
/// Handles must be live; `value` must be valid, `index` may be null.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_delta_hat(
    inst: *const RcmdpInstance,
    policy: *const RcmdpPolicy,
    b0: f64,
    value: *mut f64,
    index: *mut usize,
) -> RcmdpStatus {
    guard(|| {
        let inst = &unsafe { deref(inst, "inst") }?.0;
        let p = &unsafe { deref(policy, "policy") }?.0;
        if value.is_null() {
            return Err(Failure::Null("value"));
        }
        let d = delta_hat(inst, p, b0)?;
        unsafe {
            *value = d.value;
            if let Some(i) = index.as_mut() {
                *i = d.index;
            }
        }
        Ok(())
    })
}

/// Epigraph bisection with `outer_iterations` thresholds and a warm-started
/// projected-gradient subroutine of `iterations` steps of size `learning_rate`.
///
/// # Safety
/// `inst` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_solve_epigraph(
    inst: *const RcmdpInstance,
    outer_iterations: usize,
    iterations: usize,
    learning_rate: f64,
    out: *mut *mut RcmdpPolicy,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inst = &unsafe { deref(inst, "inst") }?.0;
        let cfg = BisectionConfig {
            outer_iterations,
            subroutine: SubroutineConfig::new(iterations, learning_rate),
            warm_start: true,
        };
        let (p, _) = bisection_solve(inst, &cfg)?;
        unsafe { *out = Box::into_raw(Box::new(RcmdpPolicy(p))) };
        Ok(())
    })
}

/// Optimal return of a single-kernel instance and the extracted policy.
///
/// # Safety
/// `inst` must be live; `value` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rcmdp_solve_lp(
    inst: *const RcmdpInstance,
    value: *mut f64,
    out: *mut *mut RcmdpPolicy,
) -> RcmdpStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inst = &unsafe { deref(inst, "inst") }?.0;
        if value.is_null() {
            return Err(Failure::Null("value"));
        }
        let sol = solve_cmdp_lp(inst)?;
        unsafe {
            *value = sol.value;
            *out = Box::into_raw(Box::new(RcmdpPolicy(sol.policy)));
        }
        Ok(())
    })
}
