//! C interface to the multiarm design engine.
//!
//! Scenarios and resolved designs are opaque handles. Every fallible call
//! returns a [`MaStatus`]; on failure [`ma_last_error`] describes the
//! problem for the calling thread. Strings returned through `char **`
//! out-parameters belong to the caller and are released with
//! [`ma_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use multiarm::corrections::{self, Mcc};
use multiarm::design::{design_curves, resolve_design, simulate_design, DesignReport};
use multiarm::mvn::{CorrMatrix, QmcSettings};
use multiarm::report::{render, ReportFormat};
use multiarm::scenario::DesignScenario;
use multiarm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A parsed, validated scenario.
pub struct MaScenario(DesignScenario);

/// A resolved design with its operating characteristics.
pub struct MaDesign(DesignReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(e: &Error) -> MaStatus {
    set_error(e.to_string());
    if e.is_validation() {
        MaStatus::Validation
    } else {
        MaStatus::Numeric
    }
}

fn guard(f: impl FnOnce() -> MaStatus) -> MaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == MaStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => {
            set_error("internal panic");
            MaStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, MaStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(MaStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|e| {
        set_error(format!("string argument is not UTF-8: {e}"));
        MaStatus::InvalidUtf8
    })
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> MaStatus {
    if out.is_null() {
        set_error("null output pointer");
        return MaStatus::NullPointer;
    }
    *out = CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw();
    MaStatus::Ok
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> MaStatus {
    if out.is_null() {
        set_error("null output pointer");
        return MaStatus::NullPointer;
    }
    *out = Box::into_raw(Box::new(value));
    MaStatus::Ok
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, MaStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle");
        MaStatus::NullPointer
    })
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! try_engine {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(&e),
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or an empty
/// string. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ma_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a JSON scenario document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_scenario_from_json(json: *const c_char, out: *mut *mut MaScenario) -> MaStatus {
    guard(|| {
        let text = try_status!(read_str(json));
        let s = try_engine!(DesignScenario::from_json(text));
        write_handle(out, MaScenario(s))
    })
}

/// The default scenario.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_scenario_defaults(out: *mut *mut MaScenario) -> MaStatus {
    guard(|| write_handle(out, MaScenario(DesignScenario::defaults())))
}

/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_scenario_to_json(scenario: *const MaScenario, out: *mut *mut c_char) -> MaStatus {
    guard(|| {
        let s = try_status!(handle(scenario));
        write_string(out, s.0.to_json())
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ma_scenario_free(scenario: *mut MaScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Finds the sample size and evaluates the design.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_resolve(scenario: *const MaScenario, out: *mut *mut MaDesign) -> MaStatus {
    guard(|| {
        let s = try_status!(handle(scenario));
        let report = try_engine!(resolve_design(&s.0));
        write_handle(out, MaDesign(report))
    })
}

/// Reads a design document as written by `ma_design_to_json`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_from_json(json: *const c_char, out: *mut *mut MaDesign) -> MaStatus {
    guard(|| {
        let text = try_status!(read_str(json));
        let report: DesignReport = try_engine!(serde_json::from_str(text)
            .map_err(|e| Error::validation("design", e.to_string())));
        try_engine!(report.design.scenario.validate());
        write_handle(out, MaDesign(report))
    })
}

/// # Safety
/// `design` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_to_json(design: *const MaDesign, out: *mut *mut c_char) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        write_string(out, d.0.to_json())
    })
}

/// # Safety
/// `design` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ma_design_free(design: *mut MaDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Number of experimental arms K.
///
/// # Safety
/// `design` must be a live handle; `k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_arms(design: *const MaDesign, k: *mut usize) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        if k.is_null() {
            set_error("null output pointer");
            return MaStatus::NullPointer;
        }
        *k = d.0.design.sizes.n.len();
        MaStatus::Ok
    })
}

/// Writes n₀..n_K into `sizes`, which must hold K + 1 values.
///
/// # Safety
/// `design` must be a live handle; `sizes` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ma_design_sizes(design: *const MaDesign, sizes: *mut f64, len: usize) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        let all = d.0.design.sizes.all();
        if sizes.is_null() {
            set_error("null output pointer");
            return MaStatus::NullPointer;
        }
        if len < all.len() {
            set_error(format!("buffer holds {len} values, {} needed", all.len()));
            return MaStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(all.as_ptr(), sizes, all.len());
        MaStatus::Ok
    })
}

/// Power of the chosen type achieved by the design.
///
/// # Safety
/// `design` must be a live handle; `power` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_achieved_power(design: *const MaDesign, power: *mut f64) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        if power.is_null() {
            set_error("null output pointer");
            return MaStatus::NullPointer;
        }
        *power = d.0.design.achieved_power;
        MaStatus::Ok
    })
}

/// One operating characteristic. `truth` is `HG`, `HA` or `LFC<k>`;
/// `quantity` is a curve-file quantity name (`p_con`, `fwer_I1`, ...);
/// `arm` (1-based) selects the marginal power and is ignored otherwise.
/// Undefined values (pFDR with no rejections) are returned as NaN.
///
/// # Safety
/// `design` must be a live handle; strings NUL-terminated; `value` writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_opchar(
    design: *const MaDesign,
    truth: *const c_char,
    quantity: *const c_char,
    arm: usize,
    value: *mut f64,
) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        let truth = try_status!(read_str(truth));
        let quantity = try_status!(read_str(quantity));
        if value.is_null() {
            set_error("null output pointer");
            return MaStatus::NullPointer;
        }
        let Some(result) = d.0.opchars.iter().find(|r| r.label.to_string() == truth) else {
            return fail(&Error::validation("truth", format!("unknown truth `{truth}`")));
        };
        let entry = result
            .opchars
            .entries()
            .into_iter()
            .find(|e| e.quantity == quantity && (e.arm.is_none() || e.arm == Some(arm)));
        match entry {
            Some(e) => {
                *value = e.value.unwrap_or(f64::NAN);
                MaStatus::Ok
            }
            None => fail(&Error::validation(
                "quantity",
                format!("unknown quantity `{quantity}` (arm {arm})"),
            )),
        }
    })
}

/// Simulates the design; writes the comparison with the analytic values as
/// JSON.
///
/// # Safety
/// `design` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_simulate(
    design: *const MaDesign,
    replicates: u64,
    seed: u64,
    out: *mut *mut c_char,
) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        let sim = try_engine!(simulate_design(&d.0.design, replicates, seed));
        write_string(out, serde_json::to_string_pretty(&sim).expect("simulation serialises"))
    })
}

/// Curve data as CSV (`theta,quantity,arm,value,series`).
///
/// # Safety
/// `design` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_curves_csv(design: *const MaDesign, quality: usize, out: *mut *mut c_char) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        let curves = try_engine!(design_curves(&d.0.design, quality));
        write_string(out, curves.to_csv())
    })
}

/// Report in `format` (`md` or `html`).
///
/// # Safety
/// `design` must be a live handle; `format` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ma_design_report(design: *const MaDesign, format: *const c_char, out: *mut *mut c_char) -> MaStatus {
    guard(|| {
        let d = try_status!(handle(design));
        let format: ReportFormat = try_engine!(try_status!(read_str(format)).parse());
        write_string(out, render(&d.0, format, None))
    })
}

/// Per-hypothesis significance levels γ₁..γ_K for correction `mcc` (a
/// scenario-file identifier such as `holm_bonferroni`). `corr` is the
/// row-major K×K test-statistic correlation, required by the Dunnett
/// corrections and ignored (may be null) otherwise.
///
/// # Safety
/// `mcc` NUL-terminated; `corr` null or K×K doubles; `gammas` K doubles.
#[no_mangle]
pub unsafe extern "C" fn ma_thresholds(
    mcc: *const c_char,
    alpha: f64,
    k: usize,
    corr: *const f64,
    gammas: *mut f64,
) -> MaStatus {
    guard(|| {
        let id = try_status!(read_str(mcc));
        let Some(mcc) = Mcc::from_id(id) else {
            return fail(&Error::validation("mcc", format!("unknown correction `{id}`")));
        };
        if gammas.is_null() {
            set_error("null output pointer");
            return MaStatus::NullPointer;
        }
        let matrix = if corr.is_null() {
            None
        } else {
            let flat = std::slice::from_raw_parts(corr, k * k);
            let rows = flat.chunks(k.max(1)).map(<[f64]>::to_vec).collect();
            Some(try_engine!(CorrMatrix::new(rows)))
        };
        let set = try_engine!(corrections::thresholds(mcc, alpha, k, matrix.as_ref(), &QmcSettings::default()));
        ptr::copy_nonoverlapping(set.gammas.as_ptr(), gammas, k);
        MaStatus::Ok
    })
}
