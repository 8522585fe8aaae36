//! C ABI over the RELATE encoder.
//!
//! Every fallible call returns a [`RelateStatus`]. On failure the thread's
//! last error message is set and can be read with [`relate_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use relate::config::{AnyEncoder, RunConfig};
use relate::modality::{time_features, FoneConfig};
use relate::schema::RelationalDatabase;
use relate::{metrics, Error, ParameterStore};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelateStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Schema = 4,
    Io = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A loaded parameter store.
pub struct RelateParams {
    store: ParameterStore,
}

/// A dataset, an encoder bound to its schema, and encoder parameters.
pub struct RelateSession {
    db: RelationalDatabase,
    encoder: AnyEncoder,
    store: ParameterStore,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RelateStatus {
    match e {
        Error::Argument(_) => RelateStatus::InvalidArgument,
        Error::Config(_) | Error::Json(_) => RelateStatus::Config,
        Error::Schema(_) | Error::Ingestion { .. } | Error::Integrity { .. } | Error::EmptyNode(_) | Error::Csv(_) => {
            RelateStatus::Schema
        }
        Error::Io { .. } | Error::Format(_) => RelateStatus::Io,
        _ => RelateStatus::Numerical,
    }
}

struct Failure(RelateStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: RelateStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RelateStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RelateStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RelateStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(RelateStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RelateStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn output<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(RelateStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(fail(RelateStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies `values` into `out`, or reports the needed length through `written`.
unsafe fn fill(values: &[f64], out: *mut f64, capacity: usize, written: *mut usize) -> Result<(), Failure> {
    let written = output(written, "written")?;
    *written = values.len();
    if capacity < values.len() {
        return Err(fail(
            RelateStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(fail(RelateStatus::NullPointer, "out is null"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn relate_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn relate_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a parameter file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn relate_params_load(path: *const c_char, out: *mut *mut RelateParams) -> RelateStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = output(out, "out")?;
        let store = ParameterStore::load(path)?;
        *out = Box::into_raw(Box::new(RelateParams { store }));
        Ok(())
    })
}

/// Writes a parameter file.
///
/// # Safety
/// `params` must come from [`relate_params_load`] or
/// [`relate_session_params`] and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn relate_params_save(params: *const RelateParams, path: *const c_char) -> RelateStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| fail(RelateStatus::NullPointer, "params is null"))?;
        let path = text(path, "path")?;
        params.store.save(path)?;
        Ok(())
    })
}

/// Number of trainable scalars.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_params_count(params: *const RelateParams, out: *mut usize) -> RelateStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| fail(RelateStatus::NullPointer, "params is null"))?;
        *output(out, "out")? = params.store.total_count();
        Ok(())
    })
}

/// Releases a parameter handle. Null is ignored.
///
/// # Safety
/// `params` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relate_params_free(params: *mut RelateParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Opens a run config: loads its dataset, binds its encoder and loads the
/// config's model, or initializes fresh parameters from the config seed.
///
/// # Safety
/// `config_path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_session_open(config_path: *const c_char, out: *mut *mut RelateSession) -> RelateStatus {
    guard(|| {
        let path = PathBuf::from(text(config_path, "config_path")?);
        let out = output(out, "out")?;
        let cfg = RunConfig::load(&path)?;
        let (db, _) = cfg.database()?;
        let encoder = cfg.build_encoder(&db.manifest, cfg.tokens()?)?;
        let store = match &cfg.model {
            Some(m) => ParameterStore::load(m)?,
            None => encoder.as_node_encoder().init_params(cfg.seed)?,
        };
        *out = Box::into_raw(Box::new(RelateSession { db, encoder, store }));
        Ok(())
    })
}

/// Embedding width `d`.
///
/// # Safety
/// `session` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_session_dim(session: *const RelateSession, out: *mut usize) -> RelateStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| fail(RelateStatus::NullPointer, "session is null"))?;
        *output(out, "out")? = s.encoder.as_node_encoder().d();
        Ok(())
    })
}

/// Row count of `table`.
///
/// # Safety
/// `session` must be a live handle, `table` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_session_rows(
    session: *const RelateSession,
    table: *const c_char,
    out: *mut usize,
) -> RelateStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| fail(RelateStatus::NullPointer, "session is null"))?;
        let name = text(table, "table")?;
        let t = s
            .db
            .table(name)
            .ok_or_else(|| fail(RelateStatus::Schema, format!("unknown table `{name}`")))?;
        *output(out, "out")? = t.len();
        Ok(())
    })
}

/// Row-major `rows × d` embeddings of `table`. `written` receives the
/// number of values, also when `capacity` is too small.
///
/// # Safety
/// `session` must be a live handle, `table` NUL-terminated, `out` valid for
/// `capacity` writes and `written` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_session_encode(
    session: *const RelateSession,
    table: *const c_char,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> RelateStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| fail(RelateStatus::NullPointer, "session is null"))?;
        let name = text(table, "table")?;
        let t = s
            .db
            .table(name)
            .ok_or_else(|| fail(RelateStatus::Schema, format!("unknown table `{name}`")))?;
        let z = s.encoder.encode_table(&s.store, t, None)?;
        fill(z.data(), out, capacity, written)
    })
}

/// Copies the session's parameters into a new handle.
///
/// # Safety
/// `session` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_session_params(session: *const RelateSession, out: *mut *mut RelateParams) -> RelateStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| fail(RelateStatus::NullPointer, "session is null"))?;
        let out = output(out, "out")?;
        *out = Box::into_raw(Box::new(RelateParams { store: s.store.clone() }));
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relate_session_free(session: *mut RelateSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// ROC AUC of `n` scores against 0/1 labels, ties counted as one half.
///
/// # Safety
/// `scores` and `labels` must each hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relate_auc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> RelateStatus {
    guard(|| {
        let v = metrics::auc(slice(scores, n, "scores")?, slice(labels, n, "labels")?)?;
        *output(out, "out")? = v;
        Ok(())
    })
}

/// Mean absolute error of `n` predictions.
///
/// # Safety
/// `predictions` and `targets` must each hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_mae(predictions: *const f64, targets: *const f64, n: usize, out: *mut f64) -> RelateStatus {
    guard(|| {
        let v = metrics::mae(slice(predictions, n, "predictions")?, slice(targets, n, "targets")?)?;
        *output(out, "out")? = v;
        Ok(())
    })
}

/// Fourier number features of `x` for scales `10^-2 … 10^4`: 14 values.
///
/// # Safety
/// `out` must be valid for `capacity` writes and `written` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_fone(x: f64, out: *mut f64, capacity: usize, written: *mut usize) -> RelateStatus {
    guard(|| {
        if !x.is_finite() {
            return Err(fail(RelateStatus::InvalidArgument, "x must be finite"));
        }
        fill(&FoneConfig::default().features(x), out, capacity, written)
    })
}

/// Cyclic and absolute time features of epoch seconds `t`: 28 values.
///
/// # Safety
/// `out` must be valid for `capacity` writes and `written` writable.
#[no_mangle]
pub unsafe extern "C" fn relate_time_features(t: i64, out: *mut f64, capacity: usize, written: *mut usize) -> RelateStatus {
    guard(|| fill(&time_features(t)?, out, capacity, written))
}
