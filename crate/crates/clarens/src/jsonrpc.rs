//! JSON-RPC 2.0 wire codec.
//!
//! Datetime and base64 values have no native JSON representation; they ride
//! as tagged single-key objects `{"$dt": "<iso8601>"}` and
//! `{"$b64": "<base64>"}`. Integers must fit the 32-bit signed range so the
//! two encodings stay value-for-value equivalent; anything larger is a parse
//! fault rather than a silent widening.

use base64::Engine as _;
use serde_json::{json, Map, Value as Json};

use crate::fault::{self, Fault};
use crate::rpc::{RpcOutcome, RpcResponse};
use crate::value::{format_datetime, parse_datetime, RpcValue, BASE64_KEY, DATETIME_KEY};

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

/// Converts an [`RpcValue`] to its JSON representation. The caller is
/// responsible for having checked encodability (finite doubles, no reserved
/// struct keys).
pub fn value_to_json(v: &RpcValue) -> Json {
    match v {
        RpcValue::Int(i) => json!(i),
        RpcValue::Bool(b) => json!(b),
        RpcValue::Str(s) => json!(s),
        RpcValue::Double(d) => json!(d),
        RpcValue::DateTime(dt) => json!({ DATETIME_KEY: format_datetime(dt) }),
        RpcValue::Base64(bytes) => json!({ BASE64_KEY: b64().encode(bytes) }),
        RpcValue::Array(items) => Json::Array(items.iter().map(value_to_json).collect()),
        RpcValue::Struct(map) => {
            let mut obj = Map::new();
            for (k, v) in map {
                obj.insert(k.clone(), value_to_json(v));
            }
            Json::Object(obj)
        }
    }
}

/// Converts JSON into an [`RpcValue`], enforcing the 32-bit integer range
/// and the tagged-object conventions.
pub fn json_to_value(j: &Json) -> Result<RpcValue, Fault> {
    match j {
        Json::Bool(b) => Ok(RpcValue::Bool(*b)),
        Json::String(s) => Ok(RpcValue::Str(s.clone())),
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                i32::try_from(i)
                    .map(RpcValue::Int)
                    .map_err(|_| Fault::parse(format!("integer out of 32-bit range: {i}")))
            } else if let Some(u) = n.as_u64() {
                i32::try_from(u)
                    .map(RpcValue::Int)
                    .map_err(|_| Fault::parse(format!("integer out of 32-bit range: {u}")))
            } else {
                // serde_json guarantees finite here.
                Ok(RpcValue::Double(n.as_f64().unwrap()))
            }
        }
        Json::Array(items) => items
            .iter()
            .map(json_to_value)
            .collect::<Result<Vec<_>, _>>()
            .map(RpcValue::Array),
        Json::Object(obj) => {
            if obj.len() == 1 {
                if let Some(Json::String(s)) = obj.get(DATETIME_KEY) {
                    return parse_datetime(s)
                        .map(RpcValue::DateTime)
                        .ok_or_else(|| Fault::parse(format!("invalid datetime: {s:?}")));
                }
                if let Some(Json::String(s)) = obj.get(BASE64_KEY) {
                    return b64()
                        .decode(s.as_bytes())
                        .map(RpcValue::Base64)
                        .map_err(|_| Fault::parse("invalid base64"));
                }
            }
            let mut map = std::collections::BTreeMap::new();
            for (k, v) in obj {
                if k == DATETIME_KEY || k == BASE64_KEY {
                    return Err(Fault::parse(format!("reserved struct key: {k}")));
                }
                map.insert(k.clone(), json_to_value(v)?);
            }
            Ok(RpcValue::Struct(map))
        }
        Json::Null => Err(Fault::parse("null is not a representable value")),
    }
}

pub fn encode_call(
    method: &str,
    params: &[RpcValue],
    call_id: Option<&str>,
) -> Result<String, Fault> {
    for p in params {
        p.check_encodable()
            .map_err(|e| Fault::bad_params(e.to_string()))?;
    }
    let body = json!({
        "jsonrpc": "2.0",
        "method": method,
        "params": params.iter().map(value_to_json).collect::<Vec<_>>(),
        "id": call_id,
    });
    Ok(body.to_string())
}

/// Decodes a request envelope into `(method, params, call_id)`.
pub fn decode_call(body: &[u8]) -> Result<(String, Vec<RpcValue>, Option<String>), Fault> {
    let j: Json = serde_json::from_slice(body)
        .map_err(|e| Fault::parse(format!("malformed JSON: {e}")))?;
    let obj = j
        .as_object()
        .ok_or_else(|| Fault::parse("request is not a JSON object"))?;
    match obj.get("jsonrpc") {
        Some(Json::String(v)) if v == "2.0" => {}
        _ => return Err(Fault::parse("missing or unsupported jsonrpc version")),
    }
    let method = obj
        .get("method")
        .and_then(Json::as_str)
        .ok_or_else(|| Fault::parse("missing method"))?
        .to_string();
    let params = match obj.get("params") {
        None | Some(Json::Null) => Vec::new(),
        Some(Json::Array(items)) => items
            .iter()
            .map(json_to_value)
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(Fault::bad_params("params must be a positional array")),
    };
    let call_id = match obj.get("id") {
        None | Some(Json::Null) => None,
        Some(Json::String(s)) => Some(s.clone()),
        Some(Json::Number(n)) => Some(n.to_string()),
        Some(_) => return Err(Fault::parse("id must be a string or number")),
    };
    Ok((method, params, call_id))
}

pub fn encode_response(resp: &RpcResponse) -> String {
    let id = match &resp.call_id {
        Some(s) => json!(s),
        None => Json::Null,
    };
    let body = match &resp.outcome {
        RpcOutcome::Value(v) => json!({
            "jsonrpc": "2.0",
            "result": value_to_json(v),
            "id": id,
        }),
        RpcOutcome::Fault(f) => json!({
            "jsonrpc": "2.0",
            "error": {
                "code": fault::to_jsonrpc_code(f.code),
                "message": f.message,
            },
            "id": id,
        }),
    };
    body.to_string()
}

pub fn decode_response(body: &[u8]) -> Result<RpcResponse, Fault> {
    let j: Json = serde_json::from_slice(body)
        .map_err(|e| Fault::parse(format!("malformed JSON: {e}")))?;
    let obj = j
        .as_object()
        .ok_or_else(|| Fault::parse("response is not a JSON object"))?;
    let call_id = match obj.get("id") {
        None | Some(Json::Null) => None,
        Some(Json::String(s)) => Some(s.clone()),
        Some(Json::Number(n)) => Some(n.to_string()),
        Some(_) => return Err(Fault::parse("id must be a string or number")),
    };
    if let Some(err) = obj.get("error") {
        let code = err
            .get("code")
            .and_then(Json::as_i64)
            .ok_or_else(|| Fault::parse("error missing code"))?;
        let message = err
            .get("message")
            .and_then(Json::as_str)
            .unwrap_or("")
            .to_string();
        return Ok(RpcResponse {
            outcome: RpcOutcome::Fault(Fault::new(fault::from_jsonrpc_code(code as i32), message)),
            call_id,
        });
    }
    let result = obj
        .get("result")
        .ok_or_else(|| Fault::parse("response has neither result nor error"))?;
    Ok(RpcResponse {
        outcome: RpcOutcome::Value(json_to_value(result)?),
        call_id,
    })
}
