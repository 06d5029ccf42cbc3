//! XML-RPC wire codec.
//!
//! Covers exactly the classic XML-RPC surface: `methodCall` /
//! `methodResponse` documents with the eight value types. Output is
//! canonical (compact, no inter-tag whitespace, structs in key order);
//! input is accepted leniently where the XML-RPC ecosystem is lenient
//! (`<i4>`, bare `<value>` text meaning string, whitespace inside
//! base64, line-wrapped documents).

use std::collections::BTreeMap;

use base64::Engine as _;
use quick_xml::events::Event;
use quick_xml::Reader;

use crate::fault::Fault;
use crate::rpc::{RpcOutcome, RpcResponse};
use crate::value::{format_datetime, parse_datetime, RpcValue, BASE64_KEY, DATETIME_KEY};

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

fn escape_text(s: &str, out: &mut String) {
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            // Carriage returns would be folded to newlines by a conforming
            // XML parser; a character reference survives intact.
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

fn write_value(v: &RpcValue, out: &mut String) {
    out.push_str("<value>");
    match v {
        RpcValue::Int(i) => {
            out.push_str("<int>");
            out.push_str(&i.to_string());
            out.push_str("</int>");
        }
        RpcValue::Bool(b) => {
            out.push_str("<boolean>");
            out.push(if *b { '1' } else { '0' });
            out.push_str("</boolean>");
        }
        RpcValue::Str(s) => {
            out.push_str("<string>");
            escape_text(s, out);
            out.push_str("</string>");
        }
        RpcValue::Double(d) => {
            out.push_str("<double>");
            out.push_str(&d.to_string());
            out.push_str("</double>");
        }
        RpcValue::DateTime(dt) => {
            out.push_str("<dateTime.iso8601>");
            out.push_str(&format_datetime(dt));
            out.push_str("</dateTime.iso8601>");
        }
        RpcValue::Base64(bytes) => {
            out.push_str("<base64>");
            out.push_str(&b64().encode(bytes));
            out.push_str("</base64>");
        }
        RpcValue::Array(items) => {
            out.push_str("<array><data>");
            for item in items {
                write_value(item, out);
            }
            out.push_str("</data></array>");
        }
        RpcValue::Struct(map) => {
            out.push_str("<struct>");
            for (k, v) in map {
                out.push_str("<member><name>");
                escape_text(k, out);
                out.push_str("</name>");
                write_value(v, out);
                out.push_str("</member>");
            }
            out.push_str("</struct>");
        }
    }
    out.push_str("</value>");
}

pub fn encode_call(method: &str, params: &[RpcValue]) -> Result<String, Fault> {
    for p in params {
        p.check_encodable()
            .map_err(|e| Fault::bad_params(e.to_string()))?;
    }
    let mut out = String::from("<?xml version=\"1.0\"?><methodCall><methodName>");
    escape_text(method, &mut out);
    out.push_str("</methodName><params>");
    for p in params {
        out.push_str("<param>");
        write_value(p, &mut out);
        out.push_str("</param>");
    }
    out.push_str("</params></methodCall>");
    Ok(out)
}

pub fn encode_response(resp: &RpcResponse) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?><methodResponse>");
    match &resp.outcome {
        RpcOutcome::Value(v) => {
            out.push_str("<params><param>");
            write_value(v, &mut out);
            out.push_str("</param></params>");
        }
        RpcOutcome::Fault(f) => {
            let mut m = BTreeMap::new();
            m.insert("faultCode".to_string(), RpcValue::Int(f.code));
            m.insert("faultString".to_string(), RpcValue::Str(f.message.clone()));
            out.push_str("<fault>");
            write_value(&RpcValue::Struct(m), &mut out);
            out.push_str("</fault>");
        }
    }
    out.push_str("</methodResponse>");
    out
}

struct Parser<'a> {
    reader: Reader<&'a [u8]>,
}

type PResult<T> = Result<T, Fault>;

fn perr(msg: impl Into<String>) -> Fault {
    Fault::parse(msg)
}

impl<'a> Parser<'a> {
    fn new(body: &'a [u8]) -> PResult<Self> {
        let text = std::str::from_utf8(body).map_err(|_| perr("body is not valid UTF-8"))?;
        let mut reader = Reader::from_str(text);
        reader.config_mut().expand_empty_elements = true;
        Ok(Parser { reader })
    }

    fn next_event(&mut self) -> PResult<Event<'a>> {
        loop {
            match self.reader.read_event() {
                Ok(Event::Decl(_)) | Ok(Event::Comment(_)) | Ok(Event::PI(_)) => continue,
                Ok(Event::DocType(_)) => return Err(perr("DOCTYPE not allowed")),
                Ok(ev) => return Ok(ev),
                Err(e) => return Err(perr(format!("malformed XML: {e}"))),
            }
        }
    }

    /// Next event with whitespace-only text skipped (structural position).
    fn next_structural(&mut self) -> PResult<Event<'a>> {
        loop {
            let ev = self.next_event()?;
            if let Event::Text(t) = &ev {
                let text = t.decode().map_err(|e| perr(e.to_string()))?;
                if text.chars().all(char::is_whitespace) {
                    continue;
                }
                return Err(perr("unexpected character data"));
            }
            return Ok(ev);
        }
    }

    fn expect_start(&mut self, tag: &str) -> PResult<()> {
        match self.next_structural()? {
            Event::Start(e) if e.name().as_ref() == tag.as_bytes() => Ok(()),
            other => Err(perr(format!("expected <{tag}>, got {other:?}"))),
        }
    }

    fn expect_end(&mut self, tag: &str) -> PResult<()> {
        match self.next_structural()? {
            Event::End(e) if e.name().as_ref() == tag.as_bytes() => Ok(()),
            other => Err(perr(format!("expected </{tag}>, got {other:?}"))),
        }
    }

    /// Reads the text content of the current element up to its end tag.
    fn read_text(&mut self, tag: &str) -> PResult<String> {
        let mut acc = String::new();
        loop {
            match self.next_event()? {
                Event::Text(t) => acc.push_str(&t.decode().map_err(|e| perr(e.to_string()))?),
                Event::CData(c) => {
                    let raw = c.into_inner();
                    acc.push_str(
                        std::str::from_utf8(&raw).map_err(|_| perr("CDATA not UTF-8"))?,
                    );
                }
                Event::GeneralRef(r) => acc.push_str(
                    &r.xml10_content()
                        .map_err(|e| perr(format!("bad entity: {e}")))?,
                ),
                Event::End(e) if e.name().as_ref() == tag.as_bytes() => return Ok(acc),
                other => return Err(perr(format!("unexpected content in <{tag}>: {other:?}"))),
            }
        }
    }

    /// Parses the contents of a `<value>` element whose start tag has been
    /// consumed. Bare text is a string, per the XML-RPC convention.
    fn parse_value_body(&mut self) -> PResult<RpcValue> {
        let mut text = String::new();
        let mut typed: Option<RpcValue> = None;
        loop {
            match self.next_event()? {
                Event::Text(t) => text.push_str(&t.decode().map_err(|e| perr(e.to_string()))?),
                Event::CData(c) => {
                    let raw = c.into_inner();
                    text.push_str(
                        std::str::from_utf8(&raw).map_err(|_| perr("CDATA not UTF-8"))?,
                    );
                }
                Event::GeneralRef(r) => text.push_str(
                    &r.xml10_content()
                        .map_err(|e| perr(format!("bad entity: {e}")))?,
                ),
                Event::Start(e) => {
                    if typed.is_some() {
                        return Err(perr("multiple type elements in <value>"));
                    }
                    let name = e.name().as_ref().to_vec();
                    typed = Some(self.parse_typed(&name)?);
                }
                Event::End(e) if e.name().as_ref() == b"value" => break,
                other => return Err(perr(format!("unexpected event in <value>: {other:?}"))),
            }
        }
        match typed {
            Some(v) => {
                if text.chars().all(char::is_whitespace) {
                    Ok(v)
                } else {
                    Err(perr("mixed text and type element in <value>"))
                }
            }
            None => Ok(RpcValue::Str(text)),
        }
    }

    fn parse_typed(&mut self, name: &[u8]) -> PResult<RpcValue> {
        match name {
            b"int" | b"i4" => {
                let t = self.read_text(std::str::from_utf8(name).unwrap())?;
                t.trim()
                    .parse::<i32>()
                    .map(RpcValue::Int)
                    .map_err(|_| perr(format!("invalid int: {t:?}")))
            }
            b"boolean" => {
                let t = self.read_text("boolean")?;
                match t.trim() {
                    "0" | "false" => Ok(RpcValue::Bool(false)),
                    "1" | "true" => Ok(RpcValue::Bool(true)),
                    other => Err(perr(format!("invalid boolean: {other:?}"))),
                }
            }
            b"string" => Ok(RpcValue::Str(self.read_text("string")?)),
            b"double" => {
                let t = self.read_text("double")?;
                let d = t
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| perr(format!("invalid double: {t:?}")))?;
                if !d.is_finite() {
                    return Err(perr("double is not finite"));
                }
                Ok(RpcValue::Double(d))
            }
            b"dateTime.iso8601" => {
                let t = self.read_text("dateTime.iso8601")?;
                parse_datetime(t.trim())
                    .map(RpcValue::DateTime)
                    .ok_or_else(|| perr(format!("invalid datetime: {t:?}")))
            }
            b"base64" => {
                let t = self.read_text("base64")?;
                let compact: String = t.chars().filter(|c| !c.is_whitespace()).collect();
                b64()
                    .decode(compact.as_bytes())
                    .map(RpcValue::Base64)
                    .map_err(|_| perr("invalid base64"))
            }
            b"array" => {
                self.expect_start("data")?;
                let mut items = Vec::new();
                loop {
                    match self.next_structural()? {
                        Event::Start(e) if e.name().as_ref() == b"value" => {
                            items.push(self.parse_value_body()?);
                        }
                        Event::End(e) if e.name().as_ref() == b"data" => break,
                        other => return Err(perr(format!("unexpected in <data>: {other:?}"))),
                    }
                }
                self.expect_end("array")?;
                Ok(RpcValue::Array(items))
            }
            b"struct" => {
                let mut map = BTreeMap::new();
                loop {
                    match self.next_structural()? {
                        Event::Start(e) if e.name().as_ref() == b"member" => {
                            self.expect_start("name")?;
                            let key = self.read_text("name")?;
                            if key == DATETIME_KEY || key == BASE64_KEY {
                                return Err(perr(format!("reserved struct key: {key}")));
                            }
                            self.expect_start("value")?;
                            let val = self.parse_value_body()?;
                            self.expect_end("member")?;
                            map.insert(key, val);
                        }
                        Event::End(e) if e.name().as_ref() == b"struct" => break,
                        other => return Err(perr(format!("unexpected in <struct>: {other:?}"))),
                    }
                }
                Ok(RpcValue::Struct(map))
            }
            other => Err(perr(format!(
                "unknown value type: {}",
                String::from_utf8_lossy(other)
            ))),
        }
    }

    fn expect_eof(&mut self) -> PResult<()> {
        match self.next_structural()? {
            Event::Eof => Ok(()),
            other => Err(perr(format!("trailing content: {other:?}"))),
        }
    }
}

/// Decodes a `methodCall` document into `(method, params)`.
pub fn decode_call(body: &[u8]) -> Result<(String, Vec<RpcValue>), Fault> {
    let mut p = Parser::new(body)?;
    p.expect_start("methodCall")?;
    p.expect_start("methodName")?;
    let method = p.read_text("methodName")?.trim().to_string();
    let mut params = Vec::new();
    match p.next_structural()? {
        Event::Start(e) if e.name().as_ref() == b"params" => {
            loop {
                match p.next_structural()? {
                    Event::Start(e) if e.name().as_ref() == b"param" => {
                        p.expect_start("value")?;
                        params.push(p.parse_value_body()?);
                        p.expect_end("param")?;
                    }
                    Event::End(e) if e.name().as_ref() == b"params" => break,
                    other => return Err(perr(format!("unexpected in <params>: {other:?}"))),
                }
            }
            p.expect_end("methodCall")?;
        }
        Event::End(e) if e.name().as_ref() == b"methodCall" => {}
        other => return Err(perr(format!("unexpected in <methodCall>: {other:?}"))),
    }
    p.expect_eof()?;
    Ok((method, params))
}

/// Decodes a `methodResponse` document.
pub fn decode_response(body: &[u8]) -> Result<RpcResponse, Fault> {
    let mut p = Parser::new(body)?;
    p.expect_start("methodResponse")?;
    let outcome = match p.next_structural()? {
        Event::Start(e) if e.name().as_ref() == b"params" => {
            p.expect_start("param")?;
            p.expect_start("value")?;
            let v = p.parse_value_body()?;
            p.expect_end("param")?;
            p.expect_end("params")?;
            RpcOutcome::Value(v)
        }
        Event::Start(e) if e.name().as_ref() == b"fault" => {
            p.expect_start("value")?;
            let v = p.parse_value_body()?;
            p.expect_end("fault")?;
            let m = v
                .as_struct()
                .ok_or_else(|| perr("fault value is not a struct"))?;
            let code = m
                .get("faultCode")
                .and_then(RpcValue::as_i32)
                .ok_or_else(|| perr("fault missing faultCode"))?;
            let msg = m
                .get("faultString")
                .and_then(RpcValue::as_str)
                .unwrap_or("")
                .to_string();
            RpcOutcome::Fault(Fault::new(code, msg))
        }
        other => return Err(perr(format!("unexpected in <methodResponse>: {other:?}"))),
    };
    p.expect_end("methodResponse")?;
    p.expect_eof()?;
    Ok(RpcResponse {
        outcome,
        call_id: None,
    })
}
