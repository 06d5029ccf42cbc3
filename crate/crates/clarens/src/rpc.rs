//! Encoding-neutral request/response envelope.
//!
//! A single HTTP endpoint accepts both encodings; each incoming request is
//! examined once to decide which engine handles it, and the response goes
//! back the same way.

use crate::auth::Principal;
use crate::fault::Fault;
use crate::value::RpcValue;
use crate::{jsonrpc, xmlrpc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    XmlRpc,
    JsonRpc,
}

impl Encoding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Encoding::XmlRpc => "xmlrpc",
            Encoding::JsonRpc => "jsonrpc",
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self {
            Encoding::XmlRpc => "text/xml",
            Encoding::JsonRpc => "application/json",
        }
    }
}

/// One method invocation, decoded from either wire format.
#[derive(Debug, Clone)]
pub struct RpcCall {
    pub encoding: Encoding,
    /// Always of the form `<service>.<name>`.
    pub method: String,
    pub params: Vec<RpcValue>,
    /// JSON-RPC request id; absent for XML-RPC.
    pub call_id: Option<String>,
    /// Attached after authentication.
    pub principal: Option<Principal>,
}

impl RpcCall {
    pub fn service(&self) -> &str {
        self.method.split_once('.').map(|(s, _)| s).unwrap_or("")
    }

    pub fn method_name(&self) -> &str {
        self.method.split_once('.').map(|(_, m)| m).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RpcOutcome {
    Value(RpcValue),
    Fault(Fault),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcResponse {
    pub outcome: RpcOutcome,
    pub call_id: Option<String>,
}

impl RpcResponse {
    pub fn value(v: RpcValue, call_id: Option<String>) -> Self {
        RpcResponse {
            outcome: RpcOutcome::Value(v),
            call_id,
        }
    }

    pub fn fault(f: Fault, call_id: Option<String>) -> Self {
        RpcResponse {
            outcome: RpcOutcome::Fault(f),
            call_id,
        }
    }
}

/// Neither sniffing rule matched; the transport answers HTTP 415.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized request encoding")]
pub struct UnrecognizedEncoding;

/// Decides which engine handles a request.
///
/// The Content-Type header wins when it names exactly one encoding;
/// otherwise the first non-whitespace byte decides: `{` or `[` means
/// JSON-RPC, `<` means XML-RPC.
pub fn sniff_encoding(body: &[u8], content_type: &str) -> Result<Encoding, UnrecognizedEncoding> {
    let ct = content_type.to_ascii_lowercase();
    let ct_json = ct.contains("json");
    let ct_xml = ct.contains("xml");
    if ct_json && !ct_xml {
        return Ok(Encoding::JsonRpc);
    }
    if ct_xml && !ct_json {
        return Ok(Encoding::XmlRpc);
    }
    match body.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') | Some(b'[') => Ok(Encoding::JsonRpc),
        Some(b'<') => Ok(Encoding::XmlRpc),
        _ => Err(UnrecognizedEncoding),
    }
}

/// Validates the `<service>.<name>` shape: exactly one dot, both parts
/// non-empty.
pub fn split_method(method: &str) -> Option<(&str, &str)> {
    let mut parts = method.split('.');
    let service = parts.next()?;
    let name = parts.next()?;
    if parts.next().is_some() || service.is_empty() || name.is_empty() {
        return None;
    }
    Some((service, name))
}

/// Decodes a request body into an [`RpcCall`] (principal not yet attached).
pub fn parse_call(body: &[u8], encoding: Encoding) -> Result<RpcCall, Fault> {
    let (method, params, call_id) = match encoding {
        Encoding::XmlRpc => {
            let (m, p) = xmlrpc::decode_call(body)?;
            (m, p, None)
        }
        Encoding::JsonRpc => jsonrpc::decode_call(body)?,
    };
    if split_method(&method).is_none() {
        return Err(Fault::bad_method(format!(
            "method must be of the form service.name, got {method:?}"
        )));
    }
    Ok(RpcCall {
        encoding,
        method,
        params,
        call_id,
        principal: None,
    })
}

/// Encodes a response in the requested encoding. Total: a value that cannot
/// be represented on the wire degrades to an internal fault rather than a
/// transport error.
pub fn encode_response(resp: &RpcResponse, encoding: Encoding) -> String {
    if let RpcOutcome::Value(v) = &resp.outcome {
        if let Err(e) = v.check_encodable() {
            let fallback = RpcResponse::fault(
                Fault::internal(format!("result not encodable: {e}")),
                resp.call_id.clone(),
            );
            return encode_response(&fallback, encoding);
        }
    }
    match encoding {
        Encoding::XmlRpc => xmlrpc::encode_response(resp),
        Encoding::JsonRpc => jsonrpc::encode_response(resp),
    }
}

/// Client-side: encodes a call in the requested encoding.
pub fn encode_call(
    method: &str,
    params: &[RpcValue],
    call_id: Option<&str>,
    encoding: Encoding,
) -> Result<String, Fault> {
    match encoding {
        Encoding::XmlRpc => xmlrpc::encode_call(method, params),
        Encoding::JsonRpc => jsonrpc::encode_call(method, params, call_id),
    }
}

/// Client-side: decodes a response body.
pub fn decode_response(body: &[u8], encoding: Encoding) -> Result<RpcResponse, Fault> {
    match encoding {
        Encoding::XmlRpc => xmlrpc::decode_response(body),
        Encoding::JsonRpc => jsonrpc::decode_response(body),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::BAD_METHOD;

    #[test]
    fn sniff_agreeing_rules() {
        assert_eq!(
            sniff_encoding(b"<?xml version...", "text/xml"),
            Ok(Encoding::XmlRpc)
        );
    }

    #[test]
    fn sniff_body_only() {
        assert_eq!(
            sniff_encoding(b"{\"jsonrpc\":\"2.0\"}", ""),
            Ok(Encoding::JsonRpc)
        );
        assert_eq!(sniff_encoding(b"  [1]", ""), Ok(Encoding::JsonRpc));
        assert_eq!(sniff_encoding(b"\n<methodCall>", ""), Ok(Encoding::XmlRpc));
    }

    #[test]
    fn content_type_beats_sniffing() {
        assert_eq!(
            sniff_encoding(b"<methodCall>...", "application/json"),
            Ok(Encoding::JsonRpc)
        );
        assert_eq!(
            sniff_encoding(b"{\"jsonrpc\":\"2.0\"}", "text/xml"),
            Ok(Encoding::XmlRpc)
        );
    }

    #[test]
    fn ambiguous_content_type_falls_back_to_sniffing() {
        assert_eq!(
            sniff_encoding(b"{\"a\":1}", "application/json+xml"),
            Ok(Encoding::JsonRpc)
        );
    }

    #[test]
    fn unrecognized_is_error() {
        assert_eq!(sniff_encoding(b"hello", ""), Err(UnrecognizedEncoding));
        assert_eq!(sniff_encoding(b"", ""), Err(UnrecognizedEncoding));
        assert_eq!(sniff_encoding(b"   ", "text/plain"), Err(UnrecognizedEncoding));
    }

    #[test]
    fn method_shape_enforced() {
        assert_eq!(split_method("echo.echo"), Some(("echo", "echo")));
        assert_eq!(split_method("a.b.c"), None);
        assert_eq!(split_method("nodot"), None);
        assert_eq!(split_method(".b"), None);
        assert_eq!(split_method("a."), None);

        let body = br#"{"jsonrpc":"2.0","method":"nodot","params":[]}"#;
        let err = parse_call(body, Encoding::JsonRpc).unwrap_err();
        assert_eq!(err.code, BAD_METHOD);
    }

    #[test]
    fn parse_call_preserves_id() {
        let body = br#"{"jsonrpc":"2.0","method":"echo.echo","params":["hi"],"id":"1"}"#;
        let call = parse_call(body, Encoding::JsonRpc).unwrap();
        assert_eq!(call.method, "echo.echo");
        assert_eq!(call.call_id.as_deref(), Some("1"));
        assert_eq!(call.service(), "echo");
        assert_eq!(call.method_name(), "echo");
    }

    #[test]
    fn unencodable_result_degrades_to_internal_fault() {
        let resp = RpcResponse::value(crate::value::RpcValue::Double(f64::INFINITY), None);
        let body = encode_response(&resp, Encoding::JsonRpc);
        let decoded = decode_response(body.as_bytes(), Encoding::JsonRpc).unwrap();
        match decoded.outcome {
            RpcOutcome::Fault(f) => assert_eq!(f.code, crate::fault::INTERNAL),
            _ => panic!("expected fault"),
        }
    }
}
