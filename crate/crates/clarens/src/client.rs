//! RPC client: speaks either encoding against any server URL. Used by the
//! command-line client, the data location service's catalog fan-out, and
//! the test harnesses.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::auth::{make_token, DN_HEADER, TOKEN_HEADER};
use crate::fault::Fault;
use crate::rpc::{decode_response, encode_call, Encoding, RpcOutcome};
use crate::value::RpcValue;

#[derive(Debug, Clone)]
pub enum ClientAuth {
    None,
    /// Trusted-header mode: DN sent verbatim.
    Header { dn: String },
    /// HMAC token mode: DN bound to a timestamp under a shared secret.
    Hmac { dn: String, secret: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("network error: {0}")]
    Network(String),
    #[error("{0}")]
    Fault(#[from] Fault),
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub struct RpcClient {
    http: reqwest::Client,
    pub server_url: String,
    pub encoding: Encoding,
    pub auth: ClientAuth,
    next_id: AtomicU64,
}

impl RpcClient {
    pub fn new(server_url: impl Into<String>, encoding: Encoding, auth: ClientAuth) -> Self {
        Self::with_timeout(server_url, encoding, auth, Duration::from_secs(10))
    }

    pub fn with_timeout(
        server_url: impl Into<String>,
        encoding: Encoding,
        auth: ClientAuth,
        timeout: Duration,
    ) -> Self {
        RpcClient {
            http: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("reqwest client"),
            server_url: server_url.into(),
            encoding,
            auth,
            next_id: AtomicU64::new(1),
        }
    }

    fn unix_now_s() -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }

    /// Calls `method` on the client's configured server.
    pub async fn call(&self, method: &str, params: &[RpcValue]) -> Result<RpcValue, ClientError> {
        self.call_url(&self.server_url, method, params).await
    }

    /// Calls `method` on an arbitrary server URL (service-to-service path).
    pub async fn call_url(
        &self,
        url: &str,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, ClientError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed).to_string();
        let body = encode_call(method, params, Some(&id), self.encoding)
            .map_err(ClientError::Fault)?;
        let mut req = self
            .http
            .post(url)
            .header("content-type", self.encoding.content_type())
            .body(body);
        match &self.auth {
            ClientAuth::None => {}
            ClientAuth::Header { dn } => {
                req = req.header(DN_HEADER, dn);
            }
            ClientAuth::Hmac { dn, secret } => {
                req = req.header(TOKEN_HEADER, make_token(dn, secret, Self::unix_now_s()));
            }
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ClientError::Network(e.to_string()))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| ClientError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Protocol(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&bytes)
            )));
        }
        let decoded =
            decode_response(&bytes, self.encoding).map_err(|f| ClientError::Protocol(f.message))?;
        match decoded.outcome {
            RpcOutcome::Value(v) => Ok(v),
            RpcOutcome::Fault(f) => Err(ClientError::Fault(f)),
        }
    }
}
