//! C ABI over the engine.
//!
//! Handles are opaque. Every fallible call returns a [`CieStatus`]; on failure
//! the message is available from [`cie_last_error_message`] on the same
//! thread. Strings returned by the library must be released with
//! [`cie_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cie_core::bundled;
use cie_core::engine::Engine;
use cie_core::query_service::handle_line;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CieStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    LoadFailed = 3,
    IngestFailed = 4,
    Panicked = 5,
}

/// Opaque engine handle.
pub struct CieEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn guarded<F: FnOnce() -> CieStatus>(f: F) -> CieStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CieStatus::Panicked
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, CieStatus> {
    if p.is_null() {
        set_error(format!("`{what}` is null"));
        return Err(CieStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|e| {
        set_error(format!("`{what}` is not UTF-8: {e}"));
        CieStatus::InvalidUtf8
    })
}

fn publish(engine: Engine, out: *mut *mut CieEngine) -> CieStatus {
    let handle = Box::new(CieEngine { inner: engine });
    unsafe { *out = Box::into_raw(handle) };
    CieStatus::Ok
}

/// Builds an engine from environment and codebook JSON documents.
///
/// # Safety
/// `environment` and `codebook` must be NUL-terminated strings; `out` must be
/// a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cie_engine_new(
    environment: *const c_char,
    codebook: *const c_char,
    out: *mut *mut CieEngine,
) -> CieStatus {
    guarded(|| {
        if out.is_null() {
            set_error("`out` is null");
            return CieStatus::NullArgument;
        }
        let (env, cb) = match (text(environment, "environment"), text(codebook, "codebook")) {
            (Ok(e), Ok(c)) => (e, c),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match Engine::from_documents(env, cb) {
            Ok(engine) => publish(engine, out),
            Err(e) => {
                set_error(e.to_string());
                CieStatus::LoadFailed
            }
        }
    })
}

/// Builds an engine over the bundled Astronomy Shop model.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cie_engine_new_bundled(out: *mut *mut CieEngine) -> CieStatus {
    guarded(|| {
        if out.is_null() {
            set_error("`out` is null");
            return CieStatus::NullArgument;
        }
        match Engine::new(bundled::environment(), bundled::codebook()) {
            Ok(engine) => publish(engine, out),
            Err(e) => {
                set_error(e.to_string());
                CieStatus::LoadFailed
            }
        }
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from `cie_engine_new*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cie_engine_free(engine: *mut CieEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Ingests newline-delimited JSON observations. All or nothing.
///
/// # Safety
/// `engine` must be a live handle; `ndjson` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cie_engine_ingest(engine: *const CieEngine, ndjson: *const c_char) -> CieStatus {
    guarded(|| {
        let Some(engine) = engine.as_ref() else {
            set_error("`engine` is null");
            return CieStatus::NullArgument;
        };
        let body = match text(ndjson, "ndjson") {
            Ok(b) => b,
            Err(s) => return s,
        };
        match engine.inner.ingest_ndjson(body) {
            Ok(_) => CieStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                CieStatus::IngestFailed
            }
        }
    })
}

/// Handles one tool request frame. Protocol-level failures (bad JSON, unknown
/// method, ...) still return `Ok` with a structured error response.
///
/// # Safety
/// `engine` must be a live handle, `request` a NUL-terminated string and
/// `response` a valid pointer. The response must be freed with
/// `cie_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cie_engine_handle(
    engine: *const CieEngine,
    request: *const c_char,
    response: *mut *mut c_char,
) -> CieStatus {
    guarded(|| {
        let Some(engine) = engine.as_ref() else {
            set_error("`engine` is null");
            return CieStatus::NullArgument;
        };
        if response.is_null() {
            set_error("`response` is null");
            return CieStatus::NullArgument;
        }
        let frame = match text(request, "request") {
            Ok(f) => f,
            Err(s) => return s,
        };
        let line = handle_line(&engine.inner, frame).to_line();
        *response = CString::new(line).expect("JSON has no NUL bytes").into_raw();
        CieStatus::Ok
    })
}

/// Current snapshot revision, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cie_engine_revision(engine: *const CieEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.inner.revision())
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cie_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn cie_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cie_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

