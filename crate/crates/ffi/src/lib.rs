//! C ABI over the engine.
//!
//! Every entry point returns a [`BadliteStatus`]. On failure the message is
//! kept per thread and read with [`badlite_last_error_message`]. Strings
//! handed out by the library are freed with [`badlite_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use badlite::cluster::ClusterConfig;
use badlite::{Engine, EngineConfig, EngineError, ErrorKind, Value};

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadliteStatus {
    Ok = 0,
    ParseError = 1,
    CompileError = 2,
    DatasetNotFound = 3,
    DuplicateName = 4,
    PrimaryKeyViolation = 5,
    ActiveFunctionOnPlainDataset = 6,
    ChannelOverrun = 7,
    BrokerUnreachable = 8,
    MalformedRecord = 9,
    BrokerNotFound = 10,
    ExpectationFailed = 11,
    Io = 12,
    /// Null pointer or non-UTF-8 string argument.
    InvalidArgument = 100,
    /// A Rust panic was caught at the boundary.
    Panic = 101,
}

impl From<ErrorKind> for BadliteStatus {
    fn from(kind: ErrorKind) -> Self {
        match kind {
            ErrorKind::ParseError => BadliteStatus::ParseError,
            ErrorKind::CompileError => BadliteStatus::CompileError,
            ErrorKind::DatasetNotFound => BadliteStatus::DatasetNotFound,
            ErrorKind::DuplicateName => BadliteStatus::DuplicateName,
            ErrorKind::PrimaryKeyViolation => BadliteStatus::PrimaryKeyViolation,
            ErrorKind::ActiveFunctionOnPlainDataset => BadliteStatus::ActiveFunctionOnPlainDataset,
            ErrorKind::ChannelOverrun => BadliteStatus::ChannelOverrun,
            ErrorKind::BrokerUnreachable => BadliteStatus::BrokerUnreachable,
            ErrorKind::MalformedRecord => BadliteStatus::MalformedRecord,
            ErrorKind::BrokerNotFound => BadliteStatus::BrokerNotFound,
            ErrorKind::ExpectationFailed => BadliteStatus::ExpectationFailed,
            ErrorKind::Io => BadliteStatus::Io,
        }
    }
}

/// Opaque engine handle.
pub struct BadliteEngine {
    engine: Arc<Engine>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(BadliteStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure(e.kind.into(), e.to_string())
    }
}

fn invalid(what: &str) -> Failure {
    Failure(BadliteStatus::InvalidArgument, what.to_string())
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BadliteStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BadliteStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            BadliteStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or a handle from [`badlite_engine_new`] not yet freed.
unsafe fn handle<'a>(p: *const BadliteEngine) -> Result<&'a Engine, Failure> {
    p.as_ref().map(|h| &*h.engine).ok_or_else(|| invalid("engine is null"))
}

/// # Safety
/// `out` is null or valid for one pointer write.
unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    let c = CString::new(value).map_err(|_| invalid("output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

/// Creates an engine. `config_json` is a cluster configuration object, or
/// null for one node on a virtual clock.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is valid for
/// one pointer write.
#[no_mangle]
pub unsafe extern "C" fn badlite_engine_new(config_json: *const c_char, out: *mut *mut BadliteEngine) -> BadliteStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let config = if config_json.is_null() {
            ClusterConfig::single()
        } else {
            let raw = text(config_json, "config")?;
            serde_json::from_str(raw).map_err(|e| Failure(BadliteStatus::ParseError, format!("config: {e}")))?
        };
        let engine = Engine::new(EngineConfig::new(config))?;
        *out = Box::into_raw(Box::new(BadliteEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` is null or a handle from [`badlite_engine_new`]; it must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn badlite_engine_free(engine: *mut BadliteEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Drops broker traffic instead of sending it over HTTP.
///
/// # Safety
/// `engine` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn badlite_engine_discard_deliveries(engine: *mut BadliteEngine) -> BadliteStatus {
    guard(|| {
        handle(engine)?.set_transport(Arc::new(badlite::harness::Discard));
        Ok(())
    })
}

/// Runs a statement script; `*out_json` receives a JSON array with one
/// result object per statement.
///
/// # Safety
/// `engine` is a live handle, `script` a NUL-terminated string, `out_json`
/// valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn badlite_run_script(engine: *mut BadliteEngine, script: *const c_char, out_json: *mut *mut c_char) -> BadliteStatus {
    guard(|| {
        let e = handle(engine)?;
        let results = e.run_script(text(script, "script")?)?;
        let json = serde_json::Value::Array(results.iter().map(|r| r.to_json()).collect());
        put_string(out_json, json.to_string())
    })
}

/// Feeds one JSON record to a started feed.
///
/// # Safety
/// `engine` is a live handle; `feed` and `record` are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn badlite_ingest(engine: *mut BadliteEngine, feed: *const c_char, record: *const c_char) -> BadliteStatus {
    guard(|| {
        handle(engine)?.ingest(text(feed, "feed")?, text(record, "record")?)?;
        Ok(())
    })
}

/// Subscribes to a channel. `args_json` is a JSON array of arguments;
/// `*out_id` receives the subscription id.
///
/// # Safety
/// `engine` is a live handle; string arguments are NUL-terminated;
/// `out_id` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn badlite_subscribe(
    engine: *mut BadliteEngine,
    channel: *const c_char,
    args_json: *const c_char,
    broker: *const c_char,
    out_id: *mut *mut c_char,
) -> BadliteStatus {
    guard(|| {
        let e = handle(engine)?;
        let raw: serde_json::Value =
            serde_json::from_str(text(args_json, "args")?).map_err(|err| Failure(BadliteStatus::MalformedRecord, format!("args: {err}")))?;
        let serde_json::Value::Array(items) = raw else {
            return Err(Failure(BadliteStatus::MalformedRecord, "args must be a JSON array".into()));
        };
        let args = items.iter().map(Value::from_json).collect::<badlite::Result<Vec<_>>>()?;
        let id = e.subscribe(text(channel, "channel")?, args, text(broker, "broker")?)?;
        put_string(out_id, id)
    })
}

/// Moves virtual clocks forward and runs due channel executions.
/// `*out_json` (if not null) receives `[{"channel", "execution"}]`.
///
/// # Safety
/// `engine` is a live handle; `out_json` is null or valid for one pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn badlite_advance(engine: *mut BadliteEngine, micros: i64, out_json: *mut *mut c_char) -> BadliteStatus {
    guard(|| {
        if micros < 0 {
            return Err(invalid("cannot move clocks backwards"));
        }
        let ran = handle(engine)?.advance(micros);
        if out_json.is_null() {
            return Ok(());
        }
        let json: Vec<serde_json::Value> =
            ran.iter().map(|(channel, rec)| serde_json::json!({"channel": channel, "execution": rec})).collect();
        put_string(out_json, serde_json::Value::Array(json).to_string())
    })
}

/// Fetches persisted results of a lazy channel as a JSON array.
///
/// # Safety
/// `engine` is a live handle; string arguments are NUL-terminated;
/// `out_json` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn badlite_pull(
    engine: *mut BadliteEngine,
    channel: *const c_char,
    execution_time: *const c_char,
    subscription_id: *const c_char,
    out_json: *mut *mut c_char,
) -> BadliteStatus {
    guard(|| {
        let rows = handle(engine)?.pull(text(channel, "channel")?, text(execution_time, "execution time")?, text(subscription_id, "subscription id")?)?;
        put_string(out_json, serde_json::Value::Array(rows.iter().map(Value::to_json).collect()).to_string())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn badlite_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn badlite_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
