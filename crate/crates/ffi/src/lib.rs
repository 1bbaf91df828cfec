//! C ABI for the frbl solver.
//!
//! Every fallible call returns an [`FrblStatus`]; on failure the message is
//! available from [`frbl_last_error`] on the same thread. Strings returned
//! through `char **` out-parameters are owned by the caller and must be
//! released with [`frbl_string_free`]. Handles are released with their
//! matching `_free` function. No panic crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use frbl::finiteness::{check_finiteness, Budget};
use frbl::solver::{compute_dg, verify_duality, SolveOptions, SolveReport, Verdict};
use frbl::{catalog, Datum, FrblError};

/// Opaque datum handle.
pub struct FrblDatum(Datum);

/// Opaque solve report handle.
pub struct FrblSolveReport(SolveReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrblStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidDatum = 3,
    Parse = 4,
    InvalidArgument = 5,
    NotPositiveDefinite = 6,
    Finiteness = 7,
    CouplingConvergence = 8,
    SolveConvergence = 9,
    Geometric = 10,
    Catalog = 11,
    Io = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrblVerdict {
    /// Infinite value: no certificate applies.
    None = 0,
    CertifiedOptimal = 1,
    FeasibleOnly = 2,
    Infeasible = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes were removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &FrblError) -> FrblStatus {
    match err {
        FrblError::InvalidDatum(_) => FrblStatus::InvalidDatum,
        FrblError::Parse(_) => FrblStatus::Parse,
        FrblError::InvalidArgument(_) | FrblError::Asymmetric { .. } => FrblStatus::InvalidArgument,
        FrblError::NotPositiveDefinite(_) => FrblStatus::NotPositiveDefinite,
        FrblError::Finiteness(_) => FrblStatus::Finiteness,
        FrblError::CouplingConvergence(_) => FrblStatus::CouplingConvergence,
        FrblError::SolveConvergence(_) => FrblStatus::SolveConvergence,
        FrblError::Geometric(_) => FrblStatus::Geometric,
        FrblError::Catalog(_) => FrblStatus::Catalog,
        FrblError::Io(_) => FrblStatus::Io,
    }
}

struct Failure(FrblStatus, String);

impl From<FrblError> for Failure {
    fn from(e: FrblError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FrblStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FrblStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FrblStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(FrblStatus::NullPointer, format!("{what} is null")))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(FrblStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(FrblStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(FrblStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(FrblStatus::NullPointer, "output pointer is null".into()));
    }
    *out = CString::new(s).map_err(|e| Failure(FrblStatus::Panic, e.to_string()))?.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(FrblStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn frbl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn frbl_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string has an interior nul"),
    };
    VERSION.as_ptr()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn frbl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a datum from its JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_datum_from_json(json: *const c_char, out: *mut *mut FrblDatum) -> FrblStatus {
    guard(|| {
        check_out(out)?;
        let datum = Datum::from_json(read_str(json, "json")?)?;
        write_out(out, FrblDatum(datum))
    })
}

/// # Safety
/// `datum` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_datum_to_json(datum: *const FrblDatum, out: *mut *mut c_char) -> FrblStatus {
    guard(|| {
        let d = borrow(datum, "datum")?;
        write_string(out, d.0.to_json())
    })
}

/// SHA-256 fingerprint of the canonical datum encoding, as hex.
///
/// # Safety
/// `datum` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_datum_fingerprint(datum: *const FrblDatum, out: *mut *mut c_char) -> FrblStatus {
    guard(|| {
        let d = borrow(datum, "datum")?;
        write_string(out, d.0.fingerprint())
    })
}

/// The dual datum (d, c, B*) as a new handle.
///
/// # Safety
/// `datum` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_datum_dual(datum: *const FrblDatum, out: *mut *mut FrblDatum) -> FrblStatus {
    guard(|| {
        let d = borrow(datum, "datum")?;
        check_out(out)?;
        write_out(out, FrblDatum(d.0.dual()))
    })
}

/// # Safety
/// `datum` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn frbl_datum_free(datum: *mut FrblDatum) {
    if !datum.is_null() {
        drop(Box::from_raw(datum));
    }
}

/// Builds a catalog instance. `params` is null or whitespace-separated
/// `key=value` pairs, e.g. `"p=2/3 q=2/3 r=1/2 n=1"`.
///
/// # Safety
/// `name` must be a nul-terminated string, `params` null or one; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_catalog_export(
    name: *const c_char,
    params: *const c_char,
    out: *mut *mut FrblDatum,
) -> FrblStatus {
    guard(|| {
        check_out(out)?;
        let name = read_str(name, "name")?;
        let params: Vec<String> = if params.is_null() {
            Vec::new()
        } else {
            read_str(params, "params")?.split_whitespace().map(str::to_owned).collect()
        };
        let entry = catalog::build(name, &params)?;
        write_out(out, FrblDatum(entry.datum))
    })
}

/// Computes D_g. `restarts == 0` keeps the default; `tol <= 0` keeps the default.
///
/// # Safety
/// `datum` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_solve(
    datum: *const FrblDatum,
    tol: f64,
    restarts: u32,
    seed: u64,
    out: *mut *mut FrblSolveReport,
) -> FrblStatus {
    guard(|| {
        let d = borrow(datum, "datum")?;
        check_out(out)?;
        let opts = options(tol, restarts, seed);
        let report = compute_dg(&d.0, &opts)?;
        write_out(out, FrblSolveReport(report))
    })
}

fn options(tol: f64, restarts: u32, seed: u64) -> SolveOptions {
    let mut opts = SolveOptions { seed, ..SolveOptions::default() };
    if tol > 0.0 {
        opts.tol = tol;
    }
    if restarts > 0 {
        opts.restarts = restarts as usize;
    }
    opts
}

/// D_g from a report; `+inf` when the constant is infinite, NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn frbl_report_value(report: *const FrblSolveReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.dg_value.as_f64())
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn frbl_report_verdict(report: *const FrblSolveReport) -> FrblVerdict {
    match report.as_ref().and_then(|r| r.0.verdict()) {
        Some(Verdict::CertifiedOptimal) => FrblVerdict::CertifiedOptimal,
        Some(Verdict::FeasibleOnly) => FrblVerdict::FeasibleOnly,
        Some(Verdict::Infeasible) => FrblVerdict::Infeasible,
        None => FrblVerdict::None,
    }
}

/// Full report, including extremizers and certificate, as JSON.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_report_to_json(report: *const FrblSolveReport, out: *mut *mut c_char) -> FrblStatus {
    guard(|| {
        let r = borrow(report, "report")?;
        write_string(out, r.0.to_json_value().to_string())
    })
}

/// # Safety
/// `report` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn frbl_report_free(report: *mut FrblSolveReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Finiteness verdict with witness and search log, as JSON.
///
/// # Safety
/// `datum` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_finiteness_json(
    datum: *const FrblDatum,
    max_enum_dim: u32,
    random_trials: u32,
    seed: u64,
    out: *mut *mut c_char,
) -> FrblStatus {
    guard(|| {
        let d = borrow(datum, "datum")?;
        check_out(out)?;
        let budget = Budget { max_enum_dim: max_enum_dim as usize, random_trials: random_trials as usize, seed };
        write_string(out, check_finiteness(&d.0, &budget).to_json_value().to_string())
    })
}

/// Solves the datum and its dual. Writes both values and returns `Ok` even
/// when the gap exceeds `tol`; `within_tol` reports the comparison.
///
/// # Safety
/// `datum` must be a live handle; the three output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn frbl_verify_duality(
    datum: *const FrblDatum,
    tol: f64,
    seed: u64,
    dg: *mut f64,
    dg_dual: *mut f64,
    within_tol: *mut bool,
) -> FrblStatus {
    guard(|| {
        let d = borrow(datum, "datum")?;
        if dg.is_null() || dg_dual.is_null() || within_tol.is_null() {
            return Err(Failure(FrblStatus::NullPointer, "output pointer is null".into()));
        }
        let check = verify_duality(&d.0, tol, &options(0.0, 0, seed))?;
        *dg = check.dg;
        *dg_dual = check.dg_dual;
        *within_tol = check.within_tol;
        Ok(())
    })
}
