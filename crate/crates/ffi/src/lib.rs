//! C ABI over the `cbipm` library.
//!
//! Every fallible function returns a [`CbipmStatus`] and writes its result
//! through an out-pointer. On failure the message is available from
//! [`cbipm_last_error`] on the same thread until the next failing call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cbipm::balancers::{balance, Balanced, Estimand, Method, Settings};
use cbipm::estimators::estimate;
use cbipm::simgen::{generate, Design, SimConfig};
use cbipm::{Dataset, Error, Side, WeightVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbipmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Infeasible = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbipmEstimand {
    Att = 0,
    Ate = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbipmSide {
    Control = 0,
    Treated = 1,
}

/// Covariates, treatment and optional outcome of `n` units.
pub struct CbipmDataset {
    inner: Dataset,
}

/// Weights produced by one balancing run.
pub struct CbipmBalance {
    inner: Balanced,
    /// Uniform treated weights, used as the treated side of an ATT run.
    treated_uniform: WeightVector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(CbipmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Infeasible => CbipmStatus::Infeasible,
            ref e if e.is_numeric() => CbipmStatus::Numeric,
            Error::InvalidConfig(_) | Error::UnknownMethod(_) | Error::UnknownDesign(_) => CbipmStatus::InvalidArgument,
            _ => CbipmStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CbipmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CbipmStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CbipmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbipmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CbipmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cbipm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cbipm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from row-major covariates `x` (`n * d` values), treatment
/// indicators `t` (`n` values, 0 or 1) and outcomes `y` (`n` values, may be
/// null).
///
/// # Safety
/// The pointers must reference arrays of the stated lengths and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cbipm_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    t: *const u8,
    y: *const f64,
    out: *mut *mut CbipmDataset,
) -> CbipmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let x = slice_arg(x, len, "x")?.to_vec();
        let t = slice_arg(t, n, "t")?
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(invalid(format!("treatment value {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let y = if y.is_null() {
            None
        } else {
            Some(slice_arg(y, n, "y")?.to_vec())
        };
        let inner = Dataset::new(x, d, t, y)?;
        *out = Box::into_raw(Box::new(CbipmDataset { inner }));
        Ok(())
    })
}

/// Draws `n` units from a named simulation design (`ks_linear`,
/// `ks_nonlinear`, `ks_small_overlap` or `heterogeneous`).
///
/// # Safety
/// `design` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbipm_simulate(
    design: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut CbipmDataset,
) -> CbipmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let design: Design = str_arg(design, "design")?.parse()?;
        let (inner, _) = generate(&SimConfig::new(design, n, seed))?;
        *out = Box::into_raw(Box::new(CbipmDataset { inner }));
        Ok(())
    })
}

/// Number of units, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cbipm_dataset_n(ds: *const CbipmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Number of covariates, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cbipm_dataset_d(ds: *const CbipmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.d())
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cbipm_dataset_free(ds: *mut CbipmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Balances `ds` with a method id such as `cbps` or `ncbipm-mmd`. `iters`
/// overrides the number of outer iterations of the IPM methods; 0 keeps the
/// default.
///
/// # Safety
/// `ds` must be a live dataset handle, `method` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cbipm_balance(
    ds: *const CbipmDataset,
    method: *const c_char,
    estimand: CbipmEstimand,
    seed: u64,
    iters: usize,
    out: *mut *mut CbipmBalance,
) -> CbipmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let method: Method = str_arg(method, "method")?.parse()?;
        let estimand = match estimand {
            CbipmEstimand::Att => Estimand::Att,
            CbipmEstimand::Ate => Estimand::Ate,
        };
        let mut settings = Settings::for_method(method);
        if iters > 0 {
            settings.schedule.iters = iters;
        }
        let inner = balance(ds, method, estimand, &settings, seed)?;
        *out = Box::into_raw(Box::new(CbipmBalance {
            inner,
            treated_uniform: WeightVector::uniform(&ds.groups(), Side::Treated),
        }));
        Ok(())
    })
}

/// Copies the `n` weights of one side into `out`. For the ATT the treated
/// side is the uniform `1 / n1` on treated units.
///
/// # Safety
/// `b` must be a live balance handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cbipm_balance_weights(
    b: *const CbipmBalance,
    side: CbipmSide,
    out: *mut f64,
    len: usize,
) -> CbipmStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("balance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let weights: Vec<f64> = match (&b.inner, side) {
            (Balanced::Att(s), CbipmSide::Control) => s.weights.as_slice().to_vec(),
            (Balanced::Att(_), CbipmSide::Treated) => b.treated_uniform.as_slice().to_vec(),
            (Balanced::Ate { control, .. }, CbipmSide::Control) => control.weights.as_slice().to_vec(),
            (Balanced::Ate { treated, .. }, CbipmSide::Treated) => treated.weights.as_slice().to_vec(),
        };
        if len != weights.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", weights.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&weights);
        Ok(())
    })
}

/// Final squared IPM of the run, summed over sides for the ATE.
///
/// # Safety
/// `b` must be a live balance handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cbipm_balance_final_ipm(b: *const CbipmBalance, out: *mut f64) -> CbipmStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(|| null("balance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = b.inner.solutions().iter().map(|s| s.final_ipm).sum();
        Ok(())
    })
}

/// Weighted effect estimate; the dataset must carry outcomes.
///
/// # Safety
/// `ds` and `b` must be live handles, `b` computed on `ds`, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cbipm_estimate(ds: *const CbipmDataset, b: *const CbipmBalance, out: *mut f64) -> CbipmStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let b = b.as_ref().ok_or_else(|| null("balance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = estimate(ds, &b.inner)?;
        Ok(())
    })
}

/// Releases a balance result. Null is ignored.
///
/// # Safety
/// `b` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn cbipm_balance_free(b: *mut CbipmBalance) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}
