//! C interface to the `lungseg` toolkit.
//!
//! Every function returns an [`LsStatus`]; on failure a description is kept
//! per thread and read back with [`ls_last_error`]. Models and datasets are
//! opaque handles released with their `_free` function. Arrays are row-major
//! and owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

mod data;
mod losses;
mod metrics;
mod segmentor;

pub use data::*;
pub use losses::*;
pub use metrics::*;
pub use segmentor::*;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Data = 4,
    Io = 5,
    Internal = 6,
    Panic = 7,
}

pub(crate) struct Failure {
    status: LsStatus,
    message: String,
}

impl Failure {
    pub(crate) fn new(status: LsStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub(crate) fn null(what: &str) -> Self {
        Self::new(LsStatus::NullPointer, format!("{what} is null"))
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Self::new(LsStatus::InvalidArgument, message)
    }
}

impl From<lungseg::Error> for Failure {
    fn from(e: lungseg::Error) -> Self {
        use lungseg::Error as E;
        let status = match &e {
            E::Shape(_) => LsStatus::Shape,
            E::InvalidArgument(_) | E::UnknownName { .. } | E::Config { .. } | E::NonFinite(_) => {
                LsStatus::InvalidArgument
            }
            E::Data(_) | E::Image(_) => LsStatus::Data,
            E::Io { .. } | E::Checkpoint { .. } | E::Json(_) => LsStatus::Io,
            _ => LsStatus::Internal,
        };
        Self::new(status, e.to_string())
    }
}

impl From<candle_core::Error> for Failure {
    fn from(e: candle_core::Error) -> Self {
        Self::new(LsStatus::Internal, e.to_string())
    }
}

pub(crate) type Outcome<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

/// Runs `f`, converting errors and panics into a status.
pub(crate) fn guard(f: impl FnOnce() -> Outcome) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&format!("internal panic: {message}"));
            LsStatus::Panic
        }
    }
}

pub(crate) unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Outcome<&'a [T]> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

pub(crate) unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Outcome<&'a mut [T]> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

pub(crate) unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Outcome<&'a mut T> {
    ptr.as_mut().ok_or_else(|| Failure::null(what))
}

pub(crate) unsafe fn string<'a>(ptr: *const c_char, what: &str) -> Outcome<&'a str> {
    if ptr.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn ls_status_name(status: LsStatus) -> *const c_char {
    let s: &'static CStr = match status {
        LsStatus::Ok => c"ok",
        LsStatus::NullPointer => c"null pointer",
        LsStatus::InvalidArgument => c"invalid argument",
        LsStatus::Shape => c"shape mismatch",
        LsStatus::Data => c"data error",
        LsStatus::Io => c"i/o error",
        LsStatus::Internal => c"internal error",
        LsStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
