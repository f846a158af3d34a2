//! C ABI for the hetsim simulator.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every entry point returns a [`HetsimStatus`]
//! and records a message retrievable with [`hetsim_last_error`] on the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hetsim::harness::bench::Suite;
use hetsim::harness::{run_scenario, Scenario, ScenarioOutcome};
use hetsim::SimError;

/// Generated C header.
pub const HEADER: &str = include_str!(concat!(env!("OUT_DIR"), "/hetsim.h"));

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetsimStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Timeout = 5,
    Io = 6,
    BufferTooSmall = 7,
    BenchFailed = 8,
    Simulation = 9,
    Panic = 10,
}

pub const HETSIM_FORMAT_TABLE: u32 = 0;
pub const HETSIM_FORMAT_LINES: u32 = 1;

/// A parsed, validated scenario.
pub struct HetsimScenario {
    inner: Scenario,
}

/// The result of running a scenario.
pub struct HetsimOutcome {
    inner: ScenarioOutcome,
    cycles: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &SimError) -> HetsimStatus {
    match e {
        SimError::Parse(_) => HetsimStatus::Parse,
        SimError::Validation(_) | SimError::Config(_) | SimError::Shape(_) => HetsimStatus::Validation,
        SimError::Timeout(_) => HetsimStatus::Timeout,
        SimError::Io(_) => HetsimStatus::Io,
        SimError::AddressFault { .. } | SimError::JobRejected(_) | SimError::QueueFull(_) => HetsimStatus::Simulation,
    }
}

struct Fail(HetsimStatus, String);

impl From<SimError> for Fail {
    fn from(e: SimError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HetsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HetsimStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            set_error(&format!("internal panic: {msg}"));
            HetsimStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(HetsimStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(HetsimStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hetsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failing call on this thread, or "" after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hetsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse scenario text. Relative `file` paths resolve against `base_dir`,
/// which may be null.
///
/// # Safety
/// `text` and `base_dir` must be null or NUL-terminated; `out` must be null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn hetsim_scenario_parse(text: *const c_char, base_dir: *const c_char, out: *mut *mut HetsimScenario) -> HetsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let text = str_arg(text, "text")?;
        let base = if base_dir.is_null() { None } else { Some(Path::new(str_arg(base_dir, "base_dir")?)) };
        let sc = Scenario::parse(text, base)?;
        *out = Box::into_raw(Box::new(HetsimScenario { inner: sc }));
        Ok(())
    })
}

/// Load and validate a scenario file.
///
/// # Safety
/// `path` must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn hetsim_scenario_load(path: *const c_char, out: *mut *mut HetsimScenario) -> HetsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let sc = Scenario::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(HetsimScenario { inner: sc }));
        Ok(())
    })
}

/// # Safety
/// `sc` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hetsim_scenario_free(sc: *mut HetsimScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Run a scenario to completion or its cycle budget. A run that hits the
/// budget still produces an outcome and returns `Timeout`.
///
/// # Safety
/// `sc` must be a live scenario handle or null; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn hetsim_scenario_run(sc: *const HetsimScenario, out: *mut *mut HetsimOutcome) -> HetsimStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let sc = sc.as_ref().ok_or_else(|| null("scenario"))?;
        let o = run_scenario(&sc.inner)?;
        let cycles = o.report.find("run").next().and_then(|r| r.u64("cycles")).unwrap_or(0);
        let timed_out = o.timed_out;
        *out = Box::into_raw(Box::new(HetsimOutcome { inner: o, cycles }));
        if timed_out {
            return Err(Fail(HetsimStatus::Timeout, format!("scenario `{}` exceeded max_cycles", sc.inner.name)));
        }
        Ok(())
    })
}

/// # Safety
/// `o` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hetsim_outcome_free(o: *mut HetsimOutcome) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// Total simulated cycles, 0 for a null handle.
///
/// # Safety
/// `o` must be a live outcome handle or null.
#[no_mangle]
pub unsafe extern "C" fn hetsim_outcome_cycles(o: *const HetsimOutcome) -> u64 {
    o.as_ref().map_or(0, |o| o.cycles)
}

/// Copy the metrics report into `buf` as a NUL-terminated string.
/// `needed` receives the required size including the terminator, so a call
/// with `cap == 0` sizes the buffer.
///
/// # Safety
/// `o` must be a live outcome handle or null; `buf` must hold `cap` bytes
/// (or be null when `cap == 0`); `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn hetsim_outcome_report(o: *const HetsimOutcome, format: u32, buf: *mut c_char, cap: usize, needed: *mut usize) -> HetsimStatus {
    guard(|| {
        let o = o.as_ref().ok_or_else(|| null("outcome"))?;
        let text = match format {
            HETSIM_FORMAT_TABLE => o.inner.report.render_table(),
            HETSIM_FORMAT_LINES => o.inner.report.render_lines(),
            f => return Err(Fail(HetsimStatus::Validation, format!("unknown report format {f}"))),
        };
        let n = text.len() + 1;
        if let Some(needed) = needed.as_mut() {
            *needed = n;
        }
        if cap < n {
            return Err(Fail(HetsimStatus::BufferTooSmall, format!("report needs {n} bytes, buffer holds {cap}")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Borrow the final L1 (`which == 0`) or L2 (`which == 1`) image. The
/// pointer stays valid until the outcome is freed.
///
/// # Safety
/// `o` must be a live outcome handle or null; `data` and `len` must be null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn hetsim_outcome_memory(o: *const HetsimOutcome, which: u32, data: *mut *const u8, len: *mut usize) -> HetsimStatus {
    guard(|| {
        let o = o.as_ref().ok_or_else(|| null("outcome"))?;
        let img = match which {
            0 => &o.inner.l1,
            1 => &o.inner.l2,
            w => return Err(Fail(HetsimStatus::Validation, format!("unknown memory {w}"))),
        };
        *out_arg(data, "data")? = img.as_ptr();
        *out_arg(len, "len")? = img.len();
        Ok(())
    })
}

/// Run one benchmark suite by name. `passed` and `total` receive check
/// counts; any failing check returns `BenchFailed`.
///
/// # Safety
/// `suite` must be null or NUL-terminated; `passed` and `total` must be null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn hetsim_bench(suite: *const c_char, seed: u64, passed: *mut u32, total: *mut u32) -> HetsimStatus {
    guard(|| {
        let suite: Suite = str_arg(suite, "suite")?.parse()?;
        let checks = suite.run(seed)?;
        let ok = checks.iter().filter(|c| c.pass()).count();
        if let Some(p) = passed.as_mut() {
            *p = ok as u32;
        }
        if let Some(t) = total.as_mut() {
            *t = checks.len() as u32;
        }
        if ok != checks.len() {
            let names: Vec<_> = checks.iter().filter(|c| !c.pass()).map(|c| c.name.clone()).collect();
            return Err(Fail(HetsimStatus::BenchFailed, format!("failing checks: {}", names.join(", "))));
        }
        Ok(())
    })
}
