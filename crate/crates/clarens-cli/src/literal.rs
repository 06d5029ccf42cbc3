//! Parses command-line parameter literals into RPC values.
//!
//! Accepted shapes: integers, floats (with `.` or an exponent), `true` /
//! `false`, `b64:<base64>`, `dt:<iso8601>`, JSON arrays/objects/quoted
//! strings, and anything else as a bare string.

use base64::Engine as _;
use clarens::value::{parse_datetime, RpcValue};

pub fn parse_literal(s: &str) -> Result<RpcValue, String> {
    if s == "true" {
        return Ok(RpcValue::Bool(true));
    }
    if s == "false" {
        return Ok(RpcValue::Bool(false));
    }
    if let Some(rest) = s.strip_prefix("b64:") {
        return base64::engine::general_purpose::STANDARD
            .decode(rest)
            .map(RpcValue::Base64)
            .map_err(|e| format!("bad base64 literal: {e}"));
    }
    if let Some(rest) = s.strip_prefix("dt:") {
        return parse_datetime(rest)
            .map(RpcValue::DateTime)
            .ok_or_else(|| format!("bad datetime literal: {rest:?}"));
    }
    if looks_like_integer(s) {
        return s
            .parse::<i32>()
            .map(RpcValue::Int)
            .map_err(|_| format!("integer out of 32-bit range: {s}"));
    }
    if looks_like_float(s) {
        if let Ok(f) = s.parse::<f64>() {
            return Ok(RpcValue::Double(f));
        }
        // Not a real float after all ("1.2.3"); treat as a bare string.
    }
    if s.starts_with('[') || s.starts_with('{') || s.starts_with('"') {
        let json: serde_json::Value =
            serde_json::from_str(s).map_err(|e| format!("bad JSON literal: {e}"))?;
        return clarens::jsonrpc::json_to_value(&json).map_err(|f| f.message);
    }
    Ok(RpcValue::string(s))
}

fn looks_like_integer(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn looks_like_float(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    !body.is_empty()
        && body.bytes().next().is_some_and(|b| b.is_ascii_digit())
        && (body.contains('.') || body.contains('e') || body.contains('E'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars() {
        assert_eq!(parse_literal("42").unwrap(), RpcValue::Int(42));
        assert_eq!(parse_literal("-7").unwrap(), RpcValue::Int(-7));
        assert_eq!(parse_literal("2.5").unwrap(), RpcValue::Double(2.5));
        assert_eq!(parse_literal("1e6").unwrap(), RpcValue::Double(1e6));
        assert_eq!(parse_literal("true").unwrap(), RpcValue::Bool(true));
        assert_eq!(parse_literal("hello").unwrap(), RpcValue::string("hello"));
        assert_eq!(parse_literal("\"42\"").unwrap(), RpcValue::string("42"));
    }

    #[test]
    fn oversized_integer_is_an_error() {
        assert!(parse_literal("3000000000").is_err());
    }

    #[test]
    fn tagged_literals() {
        assert_eq!(
            parse_literal("b64:aGk=").unwrap(),
            RpcValue::Base64(b"hi".to_vec())
        );
        assert!(matches!(
            parse_literal("dt:2020-01-02T03:04:05Z").unwrap(),
            RpcValue::DateTime(_)
        ));
    }

    #[test]
    fn json_compounds() {
        let v = parse_literal(r#"{"a":1,"b":[true,2.5]}"#).unwrap();
        let m = v.as_struct().unwrap();
        assert_eq!(m["a"], RpcValue::Int(1));
        assert_eq!(
            m["b"],
            RpcValue::Array(vec![RpcValue::Bool(true), RpcValue::Double(2.5)])
        );
    }

    #[test]
    fn version_like_strings_stay_strings() {
        assert_eq!(parse_literal("1.2.3").unwrap(), RpcValue::string("1.2.3"));
        assert_eq!(parse_literal("-x").unwrap(), RpcValue::string("-x"));
    }
}
