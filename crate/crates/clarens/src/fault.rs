//! In-band RPC fault codes.
//!
//! Every failure a caller can observe is carried inside the RPC response as
//! a `(code, message)` pair; the transport never surfaces service errors as
//! HTTP statuses. The one exception is an unrecognizable request encoding,
//! which is rejected with HTTP 415 before any RPC processing starts.

use std::fmt;

pub const ACCESS_DENIED: i32 = 100;
pub const AUTH_FAILED: i32 = 101;
pub const NO_SUCH_SERVICE: i32 = 200;
pub const NO_SUCH_METHOD: i32 = 201;
pub const PARSE_FAULT: i32 = 300;
pub const BAD_METHOD: i32 = 301;
pub const BAD_PARAMS: i32 = 302;
pub const INTERNAL: i32 = 400;
pub const NOT_FOUND: i32 = 404;
pub const CONFLICT: i32 = 409;

/// An RPC-level failure, returned to the caller in-band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub code: i32,
    pub message: String,
}

impl Fault {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Fault {
            code,
            message: message.into(),
        }
    }

    pub fn access_denied(msg: impl Into<String>) -> Self {
        Fault::new(ACCESS_DENIED, msg)
    }

    pub fn auth_failed(msg: impl Into<String>) -> Self {
        Fault::new(AUTH_FAILED, msg)
    }

    pub fn no_such_service(service: &str) -> Self {
        Fault::new(NO_SUCH_SERVICE, format!("no such service: {service}"))
    }

    pub fn no_such_method(method: &str) -> Self {
        Fault::new(NO_SUCH_METHOD, format!("no such method: {method}"))
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Fault::new(PARSE_FAULT, msg)
    }

    pub fn bad_method(msg: impl Into<String>) -> Self {
        Fault::new(BAD_METHOD, msg)
    }

    pub fn bad_params(msg: impl Into<String>) -> Self {
        Fault::new(BAD_PARAMS, msg)
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Fault::new(INTERNAL, msg)
    }

    pub fn not_found(msg: impl Into<String>) -> Self {
        Fault::new(NOT_FOUND, msg)
    }

    pub fn conflict(msg: impl Into<String>) -> Self {
        Fault::new(CONFLICT, msg)
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fault {}: {}", self.code, self.message)
    }
}

impl std::error::Error for Fault {}

/// Maps an internal fault code to the JSON-RPC 2.0 wire code.
///
/// Parse, method-not-found and bad-params faults travel as the standard
/// JSON-RPC error codes; everything else keeps its native code.
pub fn to_jsonrpc_code(code: i32) -> i32 {
    match code {
        PARSE_FAULT => -32700,
        NO_SUCH_METHOD => -32601,
        BAD_PARAMS => -32602,
        other => other,
    }
}

/// Inverse of [`to_jsonrpc_code`].
pub fn from_jsonrpc_code(code: i32) -> i32 {
    match code {
        -32700 => PARSE_FAULT,
        -32601 => NO_SUCH_METHOD,
        -32602 => BAD_PARAMS,
        other => other,
    }
}
