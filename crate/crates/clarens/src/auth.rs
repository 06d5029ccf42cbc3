//! Caller authentication.
//!
//! Two pluggable modes stand in for transport-level certificate auth:
//! a trusted header carrying the DN verbatim (for tests and closed
//! deployments), and an HMAC token binding the DN to a timestamp. Either
//! way the outcome is a [`Principal`]: the certificate-style distinguished
//! name plus its grid-mapfile account, or the anonymous principal when no
//! credentials are presented at all.

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::fault::Fault;
use crate::gridmap::GridMap;

pub const DN_HEADER: &str = "x-clarens-dn";
pub const TOKEN_HEADER: &str = "x-clarens-token";

/// Accepted clock skew for HMAC tokens, seconds either way.
pub const TOKEN_SKEW_S: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthMode {
    InsecureHeader,
    HmacToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub dn: String,
    pub local_user: Option<String>,
    pub anonymous: bool,
}

impl Principal {
    pub fn anonymous() -> Self {
        Principal {
            dn: String::new(),
            local_user: None,
            anonymous: true,
        }
    }

    pub fn authenticated(dn: impl Into<String>, local_user: Option<String>) -> Self {
        Principal {
            dn: dn.into(),
            local_user,
            anonymous: false,
        }
    }
}

fn hmac_hex(secret: &str, message: &str) -> String {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(secret.as_bytes())
        .expect("hmac accepts any key length");
    mac.update(message.as_bytes());
    let out = mac.finalize().into_bytes();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the `X-Clarens-Token` value: `<dn>:<unix-ts>:<hex hmac>` where the
/// MAC covers `<dn>|<ts>`.
pub fn make_token(dn: &str, secret: &str, now_s: i64) -> String {
    let mac = hmac_hex(secret, &format!("{dn}|{now_s}"));
    format!("{dn}:{now_s}:{mac}")
}

fn verify_token(token: &str, secret: &str, now_s: i64) -> Result<String, Fault> {
    // DNs may themselves contain ':', so split from the right.
    let mut parts = token.rsplitn(3, ':');
    let mac = parts.next().unwrap_or("");
    let ts = parts.next().ok_or_else(|| Fault::auth_failed("malformed token"))?;
    let dn = parts.next().ok_or_else(|| Fault::auth_failed("malformed token"))?;
    if dn.is_empty() {
        return Err(Fault::auth_failed("empty DN in token"));
    }
    let ts: i64 = ts
        .parse()
        .map_err(|_| Fault::auth_failed("bad timestamp in token"))?;
    if (now_s - ts).abs() > TOKEN_SKEW_S {
        return Err(Fault::auth_failed("token timestamp outside allowed skew"));
    }
    let expected = hmac_hex(secret, &format!("{dn}|{ts}"));
    // Constant-time comparison is immaterial here (the MAC is not a stored
    // secret), but compare full strings to keep behavior obvious.
    if expected != mac.to_ascii_lowercase() {
        return Err(Fault::auth_failed("bad token signature"));
    }
    Ok(dn.to_string())
}

/// Resolves the caller's identity from request headers.
///
/// Header absence is never an error: it yields the anonymous principal.
/// A *present but invalid* credential is fault 101.
pub fn authenticate<'h>(
    get_header: impl Fn(&str) -> Option<&'h str>,
    mode: AuthMode,
    secret: Option<&str>,
    gridmap: &GridMap,
    now_s: i64,
) -> Result<Principal, Fault> {
    let dn = match mode {
        AuthMode::InsecureHeader => match get_header(DN_HEADER) {
            None => return Ok(Principal::anonymous()),
            Some(dn) if dn.is_empty() => return Ok(Principal::anonymous()),
            Some(dn) => dn.to_string(),
        },
        AuthMode::HmacToken => match get_header(TOKEN_HEADER) {
            None => return Ok(Principal::anonymous()),
            Some(token) => {
                let secret =
                    secret.ok_or_else(|| Fault::auth_failed("server has no token secret"))?;
                verify_token(token, secret, now_s)?
            }
        },
    };
    let local_user = gridmap.get(&dn).cloned();
    Ok(Principal::authenticated(dn, local_user))
}
