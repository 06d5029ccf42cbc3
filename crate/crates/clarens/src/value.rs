//! The value model shared by both request encodings.
//!
//! The scalar and compound set is exactly the XML-RPC one: 32-bit signed
//! integers, booleans, UTF-8 strings, doubles, ISO 8601 datetimes, base64
//! byte blobs, arrays and string-keyed structs. JSON-RPC carries datetime
//! and base64 as tagged single-key objects (`{"$dt": ...}` / `{"$b64": ...}`),
//! so those two keys are reserved and rejected as ordinary struct members in
//! both encodings.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeZone, Utc};

/// JSON-RPC tag for datetime values.
pub const DATETIME_KEY: &str = "$dt";
/// JSON-RPC tag for base64 byte blobs.
pub const BASE64_KEY: &str = "$b64";

#[derive(Debug, Clone, PartialEq)]
pub enum RpcValue {
    Int(i32),
    Bool(bool),
    Str(String),
    Double(f64),
    DateTime(DateTime<Utc>),
    Base64(Vec<u8>),
    Array(Vec<RpcValue>),
    Struct(BTreeMap<String, RpcValue>),
}

impl RpcValue {
    pub fn string(s: impl Into<String>) -> Self {
        RpcValue::Str(s.into())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            RpcValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<i32> {
        match self {
            RpcValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            RpcValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Numeric accessor: accepts both `Int` and `Double`.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            RpcValue::Double(d) => Some(*d),
            RpcValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[RpcValue]> {
        match self {
            RpcValue::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_struct(&self) -> Option<&BTreeMap<String, RpcValue>> {
        match self {
            RpcValue::Struct(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            RpcValue::Base64(b) => Some(b),
            _ => None,
        }
    }

    /// Checks that the value can be carried by both encodings: doubles must
    /// be finite and structs must not use the reserved tag keys.
    pub fn check_encodable(&self) -> Result<(), EncodeError> {
        match self {
            RpcValue::Double(d) if !d.is_finite() => Err(EncodeError::NonFiniteDouble(*d)),
            RpcValue::Array(items) => items.iter().try_for_each(RpcValue::check_encodable),
            RpcValue::Struct(map) => {
                for (k, v) in map {
                    if k == DATETIME_KEY || k == BASE64_KEY {
                        return Err(EncodeError::ReservedKey(k.clone()));
                    }
                    v.check_encodable()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl From<i32> for RpcValue {
    fn from(v: i32) -> Self {
        RpcValue::Int(v)
    }
}

impl From<bool> for RpcValue {
    fn from(v: bool) -> Self {
        RpcValue::Bool(v)
    }
}

impl From<&str> for RpcValue {
    fn from(v: &str) -> Self {
        RpcValue::Str(v.to_string())
    }
}

impl From<String> for RpcValue {
    fn from(v: String) -> Self {
        RpcValue::Str(v)
    }
}

impl From<f64> for RpcValue {
    fn from(v: f64) -> Self {
        RpcValue::Double(v)
    }
}

impl From<Vec<RpcValue>> for RpcValue {
    fn from(v: Vec<RpcValue>) -> Self {
        RpcValue::Array(v)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("double is not finite: {0}")]
    NonFiniteDouble(f64),
    #[error("reserved struct key: {0}")]
    ReservedKey(String),
}

/// Canonical datetime rendering: RFC 3339 UTC, fractional seconds only when
/// present, `Z` suffix.
pub fn format_datetime(dt: &DateTime<Utc>) -> String {
    dt.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses the accepted datetime shapes: RFC 3339 with offset, and the bare
/// `YYYYMMDDTHH:MM:SS` / `YYYY-MM-DDTHH:MM:SS` forms (taken as UTC).
pub fn parse_datetime(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y%m%dT%H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive));
        }
    }
    None
}

impl fmt::Display for RpcValue {
    /// Canonical JSON-like rendering, identical to the JSON-RPC encoding.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::jsonrpc::value_to_json(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datetime_roundtrip_whole_seconds() {
        let dt = parse_datetime("2020-01-02T03:04:05Z").unwrap();
        assert_eq!(format_datetime(&dt), "2020-01-02T03:04:05Z");
    }

    #[test]
    fn datetime_roundtrip_fractional() {
        let dt = parse_datetime("2020-01-02T03:04:05.250Z").unwrap();
        let formatted = format_datetime(&dt);
        assert_eq!(parse_datetime(&formatted).unwrap(), dt);
    }

    #[test]
    fn datetime_compact_form_is_utc() {
        let compact = parse_datetime("19980717T14:08:55").unwrap();
        let extended = parse_datetime("1998-07-17T14:08:55Z").unwrap();
        assert_eq!(compact, extended);
    }

    #[test]
    fn datetime_offset_normalizes() {
        let a = parse_datetime("2020-01-01T05:00:00+05:00").unwrap();
        let b = parse_datetime("2020-01-01T00:00:00Z").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reserved_keys_rejected() {
        let mut m = BTreeMap::new();
        m.insert("$dt".to_string(), RpcValue::Int(1));
        assert!(matches!(
            RpcValue::Struct(m).check_encodable(),
            Err(EncodeError::ReservedKey(_))
        ));
    }

    #[test]
    fn nested_non_finite_rejected() {
        let v = RpcValue::Array(vec![RpcValue::Double(f64::NAN)]);
        assert!(matches!(
            v.check_encodable(),
            Err(EncodeError::NonFiniteDouble(_))
        ));
    }
}
