//! C interface to `privci`.
//!
//! Every entry point returns a [`PrivciStatus`]. On failure the message is
//! kept per thread and read with [`privci_last_error_message`]. Handles are
//! opaque and released with their `_free` function. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`privci_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use privci::cli::Input;
use privci::dp::{eps_from_zcdp, zcdp_from_eps_delta};
use privci::pipeline::{synthesize, Method, Synthesis, SynthesisRequest};
use privci::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrivciStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Structure = 6,
    Model = 7,
    Panic = 8,
}

/// A discretized input table with its role configuration.
pub struct PrivciDataset {
    input: Input,
}

/// The outputs of one synthesis run.
pub struct PrivciSynthesis {
    inner: Synthesis,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: PrivciStatus,
    message: String,
}

impl Failure {
    fn new(status: PrivciStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PrivciStatus::Io,
            Error::Csv(_) | Error::Json(_) | Error::Parse { .. } | Error::Domain { .. } | Error::Type { .. } => {
                PrivciStatus::Parse
            }
            Error::Config(_) => PrivciStatus::Config,
            Error::Argument(_) | Error::TooLarge { .. } => PrivciStatus::InvalidArgument,
            Error::Selection(_) | Error::Structure(_) => PrivciStatus::Structure,
            Error::Reconstruction { .. } => PrivciStatus::Model,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("interior nul removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PrivciStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let message = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(PrivciStatus::Panic, format!("panic: {message}")))
    });
    match result {
        Ok(()) => {
            set_last_error(None);
            PrivciStatus::Ok
        }
        Err(f) => {
            set_last_error(Some(f.message));
            f.status
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(PrivciStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PrivciStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(PrivciStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(PrivciStatus::NullPointer, format!("{what} is null")));
    }
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(PrivciStatus::InvalidArgument, "output contains a nul byte"))
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn privci_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn privci_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a CSV file and its JSON configuration.
///
/// # Safety
/// `csv_path` and `config_path` must be nul-terminated strings; `out` must
/// point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn privci_dataset_load(
    csv_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut PrivciDataset,
) -> PrivciStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let csv = PathBuf::from(str_arg(csv_path, "csv_path")?);
        let config = PathBuf::from(str_arg(config_path, "config_path")?);
        let input = Input::load(&csv, &config)?;
        *out = Box::into_raw(Box::new(PrivciDataset { input }));
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle from [`privci_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn privci_dataset_rows(dataset: *const PrivciDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.input.data.n())
}

/// Number of attributes, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle from [`privci_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn privci_dataset_columns(dataset: *const PrivciDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.input.data.d())
}

/// # Safety
/// `dataset` must be null or a handle from [`privci_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn privci_dataset_free(dataset: *mut PrivciDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Runs `method` (`"mst"`, `"privci"` or `"prefair"`) at `(epsilon, delta)`.
/// A negative `n_out` produces as many rows as the input.
///
/// # Safety
/// `dataset` must be a live handle, `method` a nul-terminated string and
/// `out` writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesize(
    dataset: *const PrivciDataset,
    method: *const c_char,
    epsilon: f64,
    delta: f64,
    n_out: i64,
    seed: u64,
    out: *mut *mut PrivciSynthesis,
) -> PrivciStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = ref_arg(dataset, "dataset")?;
        let method: Method = str_arg(method, "method")?.parse()?;
        let constraint = ds.input.constraint_for(method)?;
        let inner = synthesize(&SynthesisRequest {
            dataset: ds.input.data.clone(),
            constraint,
            method,
            epsilon,
            delta,
            n_out: usize::try_from(n_out).unwrap_or(ds.input.data.n()),
            seed,
        })?;
        *out = Box::into_raw(Box::new(PrivciSynthesis { inner }));
        Ok(())
    })
}

/// # Safety
/// `synthesis` must be null or a handle from [`privci_synthesize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesis_free(synthesis: *mut PrivciSynthesis) {
    if !synthesis.is_null() {
        drop(Box::from_raw(synthesis));
    }
}

unsafe fn synthesis_string(
    synthesis: *const PrivciSynthesis,
    out: *mut *mut c_char,
    render: impl FnOnce(&Synthesis) -> privci::Result<String>,
) -> PrivciStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = ref_arg(synthesis, "synthesis")?;
        *out = owned_string(render(&s.inner)?)?;
        Ok(())
    })
}

/// Synthetic rows as CSV text with a header.
///
/// # Safety
/// `synthesis` must be a live handle and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesis_csv(synthesis: *const PrivciSynthesis, out: *mut *mut c_char) -> PrivciStatus {
    synthesis_string(synthesis, out, |s| s.synthetic.to_csv_string())
}

/// Fitted model as JSON.
///
/// # Safety
/// `synthesis` must be a live handle and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesis_model_json(
    synthesis: *const PrivciSynthesis,
    out: *mut *mut c_char,
) -> PrivciStatus {
    synthesis_string(synthesis, out, |s| s.model.to_json())
}

/// Provenance record as JSON.
///
/// # Safety
/// `synthesis` must be a live handle and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesis_provenance_json(
    synthesis: *const PrivciSynthesis,
    out: *mut *mut c_char,
) -> PrivciStatus {
    synthesis_string(synthesis, out, |s| s.provenance.to_json())
}

/// 1 if the constraint holds on the selected tree, 0 if it does not, -1 when
/// the run had no constraint or the handle is null.
///
/// # Safety
/// `synthesis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesis_separated(synthesis: *const PrivciSynthesis) -> c_int {
    match synthesis.as_ref().and_then(|s| s.inner.provenance.separated) {
        Some(true) => 1,
        Some(false) => 0,
        None => -1,
    }
}

/// Writes `synthetic.csv`, `model.json` and `provenance.json` into `dir`,
/// creating it if needed.
///
/// # Safety
/// `synthesis` must be a live handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn privci_synthesis_write(synthesis: *const PrivciSynthesis, dir: *const c_char) -> PrivciStatus {
    guard(|| {
        let s = &ref_arg(synthesis, "synthesis")?.inner;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let io = |p: &PathBuf, e| Failure::from(Error::Io { path: p.clone(), source: e });
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for (name, text) in [
            ("synthetic.csv", s.synthetic.to_csv_string()?),
            ("model.json", s.model.to_json()?),
            ("provenance.json", s.provenance.to_json()?),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        }
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn privci_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// zCDP parameter `ρ` for an `(ε, δ)` target.
///
/// # Safety
/// `out` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn privci_zcdp_from_eps_delta(epsilon: f64, delta: f64, out: *mut f64) -> PrivciStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = zcdp_from_eps_delta(epsilon, delta)?;
        Ok(())
    })
}

/// `ε` implied by `ρ`-zCDP at `delta`.
///
/// # Safety
/// `out` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn privci_eps_from_zcdp(rho: f64, delta: f64, out: *mut f64) -> PrivciStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = eps_from_zcdp(rho, delta)?;
        Ok(())
    })
}
