//! C ABI for the minsum toolkit.
//!
//! Programs travel across the boundary as opaque heap handles, every
//! fallible call returns a [`MinsumStatus`], and the most recent failure
//! message is kept per thread for [`minsum_last_error`]. The committed
//! header `include/minsum.h` is regenerated by the build script whenever
//! this file changes.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use minsum::dominance::{certify_quadratic, certify_sampled, Certification};
use minsum::{baselines, hyper, quadratic, Error, Program, RunOptions};

/// Outcome of a call. Matches the CLI's exit-code contract.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MinsumStatus {
    /// The call succeeded.
    Ok = 0,
    /// The input was rejected: malformed JSON, an invalid program, a
    /// dimension mismatch, or a null required pointer.
    InvalidInput = 1,
    /// The certifier examined the program and refused to certify it.
    CertificationRefused = 2,
    /// A numeric failure: degenerate curvature or a solve that stalled.
    NumericError = 3,
}

/// An immutable convex program. Create with [`minsum_program_from_json`],
/// release with [`minsum_program_free`]. Handles are not synchronized;
/// share one across threads only behind the caller's own lock.
pub struct MinsumProgram {
    inner: Program,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let stored = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn status_for(err: &Error) -> MinsumStatus {
    match err {
        Error::DegenerateCurvature(_) | Error::NumericFailure(_) => MinsumStatus::NumericError,
        _ => MinsumStatus::InvalidInput,
    }
}

fn fail(err: &Error) -> MinsumStatus {
    set_error(&err.to_string());
    status_for(err)
}

fn guard_status<F: FnOnce() -> MinsumStatus>(f: F) -> MinsumStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic");
        MinsumStatus::NumericError
    })
}

/// Message for the most recent failure on the calling thread, or an empty
/// string when no call has failed yet. The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn minsum_last_error() -> *const c_char {
    const EMPTY: &[u8] = b"\0";
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(EMPTY.as_ptr().cast())
    })
}

/// Parse a problem file (JSON) into a program handle.
///
/// Returns null when the text does not parse or the program is invalid;
/// the reason is available through [`minsum_last_error`].
///
/// # Safety
///
/// `json` must be a valid NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn minsum_program_from_json(json: *const c_char) -> *mut MinsumProgram {
    if json.is_null() {
        set_error("json must not be null");
        return ptr::null_mut();
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("json must be valid UTF-8");
            return ptr::null_mut();
        }
    };
    catch_unwind(AssertUnwindSafe(|| match Program::from_json_str(text) {
        Ok(program) => Box::into_raw(Box::new(MinsumProgram { inner: program })),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }))
    .unwrap_or_else(|_| {
        set_error("internal panic");
        ptr::null_mut()
    })
}

/// Release a program handle. A null handle is a no-op.
///
/// # Safety
///
/// `program` must be null or a pointer previously returned by
/// [`minsum_program_from_json`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn minsum_program_free(program: *mut MinsumProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Number of variables in the program; 0 for a null handle.
///
/// # Safety
///
/// `program` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn minsum_program_num_vars(program: *const MinsumProgram) -> usize {
    if program.is_null() {
        return 0;
    }
    (*program).inner.n()
}

/// Release a string returned by this library. A null pointer is a no-op.
///
/// # Safety
///
/// `s` must be null or a string previously returned through an out
/// parameter of this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn minsum_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Certify scaled diagonal dominance and hand back the certificate as a
/// JSON string in `*out_json` (release it with [`minsum_string_free`]).
///
/// All-quadratic programs are certified exactly; any other program is
/// sampled over its declared box with `samples` points and must carry a
/// `B`. On refusal the status is `CertificationRefused`, `*out_json` is
/// set to null, and the reason is available through
/// [`minsum_last_error`].
///
/// # Safety
///
/// `program` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn minsum_certify(
    program: *const MinsumProgram,
    samples: usize,
    out_json: *mut *mut c_char,
) -> MinsumStatus {
    if program.is_null() || out_json.is_null() {
        set_error("program and out_json must not be null");
        return MinsumStatus::InvalidInput;
    }
    *out_json = ptr::null_mut();
    let p = &(*program).inner;
    guard_status(|| {
        let outcome = if p.is_all_quadratic() {
            certify_quadratic(p)
        } else {
            let Some(r) = p.box_radius() else {
                set_error("sampled certification needs the problem to declare B");
                return MinsumStatus::InvalidInput;
            };
            let box_: Vec<(f64, f64)> = vec![(-r, r); p.n()];
            certify_sampled(p, &box_, samples, None)
        };
        match outcome {
            Ok(Certification::Granted(cert)) => match serde_json::to_string(&cert) {
                Ok(text) => {
                    let c = CString::new(text).expect("JSON has no interior NUL");
                    *out_json = c.into_raw();
                    MinsumStatus::Ok
                }
                Err(e) => {
                    set_error(&e.to_string());
                    MinsumStatus::NumericError
                }
            },
            Ok(Certification::Refused(refusal)) => {
                set_error(&refusal.reason);
                MinsumStatus::CertificationRefused
            }
            Err(e) => fail(&e),
        }
    })
}

/// Run the message-passing engine synchronously (the hyperedge engine when
/// the program has hyperedge factors, the quadratic engine otherwise) and
/// write the final estimate into `out_x`.
///
/// The run stops after `horizon` iterations or once the largest message
/// change falls to `tol`. Optional out parameters may be null: iterations
/// performed, whether the run converged (1/0), and whether estimates ran
/// away (1/0). A diverged run still returns `Ok`; divergence is reported,
/// not raised.
///
/// # Safety
///
/// `program` must be a live handle and `out_x` must point to storage for
/// [`minsum_program_num_vars`] doubles.
#[no_mangle]
pub unsafe extern "C" fn minsum_solve(
    program: *const MinsumProgram,
    horizon: usize,
    tol: f64,
    out_x: *mut f64,
    out_iterations: *mut usize,
    out_converged: *mut i32,
    out_diverged: *mut i32,
) -> MinsumStatus {
    if program.is_null() || out_x.is_null() {
        set_error("program and out_x must not be null");
        return MinsumStatus::InvalidInput;
    }
    let p = &(*program).inner;
    guard_status(|| {
        let options = RunOptions { horizon, tol, bound: None };
        let trace = if p.hypers().is_empty() {
            quadratic::run(p, &options).map(|(t, _)| t)
        } else {
            hyper::run(p, &options).map(|(t, _)| t)
        };
        match trace {
            Ok(trace) => {
                let estimate = trace.final_estimate();
                ptr::copy_nonoverlapping(estimate.as_ptr(), out_x, estimate.len());
                if !out_iterations.is_null() {
                    *out_iterations = trace.rows.last().map(|r| r.t).unwrap_or(0);
                }
                if !out_converged.is_null() {
                    *out_converged = trace.converged as i32;
                }
                if !out_diverged.is_null() {
                    *out_diverged = trace.diverged as i32;
                }
                MinsumStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Minimize the program objective by damped Newton from the origin and
/// write the minimizer into `out_x`. A solve that stalls before reaching
/// `tol` returns `NumericError`.
///
/// # Safety
///
/// `program` must be a live handle and `out_x` must point to storage for
/// [`minsum_program_num_vars`] doubles; `out_iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn minsum_newton(
    program: *const MinsumProgram,
    tol: f64,
    out_x: *mut f64,
    out_iterations: *mut usize,
) -> MinsumStatus {
    if program.is_null() || out_x.is_null() {
        set_error("program and out_x must not be null");
        return MinsumStatus::InvalidInput;
    }
    let p = &(*program).inner;
    guard_status(|| match baselines::newton_solve(p, &vec![0.0; p.n()], tol) {
        Ok(report) => {
            if !report.converged {
                set_error(&format!(
                    "newton stalled at gradient norm {}",
                    report.grad_norm
                ));
                return MinsumStatus::NumericError;
            }
            ptr::copy_nonoverlapping(report.x.as_ptr(), out_x, report.x.len());
            if !out_iterations.is_null() {
                *out_iterations = report.iterations;
            }
            MinsumStatus::Ok
        }
        Err(e) => fail(&e),
    })
}
