//! Soft-state discovery registry.
//!
//! Services prove liveness by re-registering; entries expire by TTL and a
//! periodic sweep removes them. Besides local RPC registration the registry
//! learns records from peer servers via single-record UDP datagrams. Only
//! locally registered records are ever published, so a record can never
//! circulate after its origin stops renewing it.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;

use crate::clock::Clock;
use crate::fault::Fault;
use crate::glob::glob_match;
use crate::plugin::{
    field_i32, field_str, need, need_str, structure, CallContext, ServicePlugin,
};
use crate::value::RpcValue;

pub const DATAGRAM_MAGIC: &str = "CLARENS-REG/1";
/// Records whose encoding exceeds this are not published.
pub const MAX_DATAGRAM_BYTES: usize = 1400;

/// The content of one registration. The registry stamps the receipt time
/// itself, so cross-node clock skew bounds staleness instead of corrupting
/// TTL arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRecord {
    pub name: String,
    pub host_url: String,
    pub methods: Vec<String>,
    pub attrs: BTreeMap<String, String>,
    pub ttl_s: u32,
}

impl ServiceRecord {
    fn validate(&self) -> Result<(), Fault> {
        if self.name.is_empty() {
            return Err(Fault::bad_params("record name must be non-empty"));
        }
        if self.host_url.is_empty() {
            return Err(Fault::bad_params("record host_url must be non-empty"));
        }
        if self.ttl_s == 0 {
            return Err(Fault::bad_params("ttl_s must be > 0"));
        }
        for field in [&self.name, &self.host_url]
            .into_iter()
            .chain(self.methods.iter())
            .chain(self.attrs.keys())
            .chain(self.attrs.values())
        {
            if field.contains('\n') {
                return Err(Fault::bad_params("record fields must not contain newlines"));
            }
        }
        if self.methods.iter().any(|m| m.is_empty() || m.contains(',')) {
            return Err(Fault::bad_params("method names must be non-empty, comma-free"));
        }
        if self.attrs.keys().any(|k| k.is_empty() || k.contains('=')) {
            return Err(Fault::bad_params("attr keys must be non-empty and '='-free"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Registered through this server's RPC surface; published to peers.
    Local,
    /// Learned from a peer datagram; never re-forwarded.
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveRecord {
    pub record: ServiceRecord,
    pub registered_at_ms: u64,
    pub origin: Origin,
}

impl LiveRecord {
    pub fn expires_at_ms(&self) -> u64 {
        self.registered_at_ms + u64::from(self.record.ttl_s) * 1000
    }

    fn is_live(&self, now_ms: u64) -> bool {
        // Expiry boundary is inclusive: expired exactly at the deadline.
        now_ms < self.expires_at_ms()
    }
}

#[derive(Default)]
pub struct RegistryStats {
    pub dropped_datagrams: AtomicU64,
    pub published_datagrams: AtomicU64,
}

pub struct Registry {
    records: parking_lot::RwLock<BTreeMap<(String, String), LiveRecord>>,
    pub stats: RegistryStats,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Registry {
            records: parking_lot::RwLock::new(BTreeMap::new()),
            stats: RegistryStats::default(),
        }
    }

    /// Stores (or replaces) a record under its `(name, host_url)` key with
    /// `registered_at` = now.
    pub fn register(&self, record: ServiceRecord, origin: Origin, now_ms: u64) -> Result<(), Fault> {
        record.validate()?;
        let key = (record.name.clone(), record.host_url.clone());
        let mut records = self.records.write();
        if origin == Origin::Learned {
            // A live local registration is authoritative over peer echoes of
            // the same key; silently prefer it.
            if let Some(existing) = records.get(&key) {
                if existing.origin == Origin::Local && existing.is_live(now_ms) {
                    return Ok(());
                }
            }
        }
        records.insert(
            key,
            LiveRecord {
                record,
                registered_at_ms: now_ms,
                origin,
            },
        );
        Ok(())
    }

    /// Removes a record; returns whether a live record was removed.
    pub fn deregister(&self, name: &str, host_url: &str, now_ms: u64) -> bool {
        let key = (name.to_string(), host_url.to_string());
        let mut records = self.records.write();
        match records.remove(&key) {
            Some(rec) => rec.is_live(now_ms),
            None => false,
        }
    }

    /// All live records whose name matches the glob and whose attrs contain
    /// every filter pair, sorted by `(name, host_url)`. Expired records are
    /// never returned, even before the purge timer runs.
    pub fn find(
        &self,
        name_pattern: &str,
        attr_filter: &BTreeMap<String, String>,
        now_ms: u64,
    ) -> Vec<LiveRecord> {
        self.records
            .read()
            .values()
            .filter(|r| r.is_live(now_ms))
            .filter(|r| glob_match(name_pattern, &r.record.name))
            .filter(|r| {
                attr_filter
                    .iter()
                    .all(|(k, v)| r.record.attrs.get(k) == Some(v))
            })
            .cloned()
            .collect()
    }

    /// Deduplicated sorted host URLs of the matching records.
    pub fn find_server(
        &self,
        name_pattern: &str,
        attr_filter: &BTreeMap<String, String>,
        now_ms: u64,
    ) -> Vec<String> {
        let mut hosts: Vec<String> = self
            .find(name_pattern, attr_filter, now_ms)
            .into_iter()
            .map(|r| r.record.host_url)
            .collect();
        hosts.sort();
        hosts.dedup();
        hosts
    }

    /// Removes every expired record; returns the count removed.
    pub fn purge_expired(&self, now_ms: u64) -> usize {
        let mut records = self.records.write();
        let before = records.len();
        records.retain(|_, r| r.is_live(now_ms));
        before - records.len()
    }

    /// Live locally-registered records, for the publication tick.
    pub fn local_live(&self, now_ms: u64) -> Vec<LiveRecord> {
        self.records
            .read()
            .values()
            .filter(|r| r.origin == Origin::Local && r.is_live(now_ms))
            .cloned()
            .collect()
    }

    /// Applies one peer datagram. Malformed input is dropped silently and
    /// counted; nothing is ever reported back to the sender.
    pub fn handle_datagram(&self, bytes: &[u8], now_ms: u64) {
        let record = match std::str::from_utf8(bytes).ok().and_then(|t| decode_datagram(t).ok()) {
            Some(r) => r,
            None => {
                self.stats.dropped_datagrams.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        if self.register(record, Origin::Learned, now_ms).is_err() {
            self.stats.dropped_datagrams.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.read().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatagramError {
    #[error("datagram exceeds {MAX_DATAGRAM_BYTES} bytes")]
    Oversize,
    #[error("malformed datagram: {0}")]
    Malformed(String),
}

/// Encodes one record as the canonical single-record datagram:
/// magic line, then `name=`, `host=`, `ttl=`, `methods=` (comma-separated),
/// then `attr.<key>=<value>` lines sorted by key. No trailing newline.
pub fn encode_datagram(record: &ServiceRecord) -> Result<String, DatagramError> {
    record
        .validate()
        .map_err(|f| DatagramError::Malformed(f.message))?;
    let mut lines = vec![
        DATAGRAM_MAGIC.to_string(),
        format!("name={}", record.name),
        format!("host={}", record.host_url),
        format!("ttl={}", record.ttl_s),
        format!("methods={}", record.methods.join(",")),
    ];
    for (k, v) in &record.attrs {
        lines.push(format!("attr.{k}={v}"));
    }
    let out = lines.join("\n");
    if out.len() > MAX_DATAGRAM_BYTES {
        return Err(DatagramError::Oversize);
    }
    Ok(out)
}

/// Strict inverse of [`encode_datagram`]: only the canonical form decodes.
pub fn decode_datagram(text: &str) -> Result<ServiceRecord, DatagramError> {
    let bad = |msg: &str| DatagramError::Malformed(msg.to_string());
    if text.len() > MAX_DATAGRAM_BYTES {
        return Err(DatagramError::Oversize);
    }
    let mut lines = text.split('\n');
    if lines.next() != Some(DATAGRAM_MAGIC) {
        return Err(bad("missing magic line"));
    }
    let mut take = |prefix: &str| -> Result<String, DatagramError> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(prefix))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected {prefix} line")))
    };
    let name = take("name=")?;
    let host_url = take("host=")?;
    let ttl_s: u32 = take("ttl=")?
        .parse()
        .map_err(|_| bad("ttl is not an integer"))?;
    let methods_line = take("methods=")?;
    let methods: Vec<String> = if methods_line.is_empty() {
        Vec::new()
    } else {
        methods_line.split(',').map(str::to_string).collect()
    };
    let mut attrs = BTreeMap::new();
    let mut last_key: Option<String> = None;
    for line in lines {
        let rest = line
            .strip_prefix("attr.")
            .ok_or_else(|| bad(&format!("unexpected line: {line:?}")))?;
        let (k, v) = rest.split_once('=').ok_or_else(|| bad("attr without '='"))?;
        if let Some(prev) = &last_key {
            if k <= prev.as_str() {
                return Err(bad("attr keys must be strictly sorted"));
            }
        }
        last_key = Some(k.to_string());
        attrs.insert(k.to_string(), v.to_string());
    }
    let record = ServiceRecord {
        name,
        host_url,
        methods,
        attrs,
        ttl_s,
    };
    record
        .validate()
        .map_err(|f| DatagramError::Malformed(f.message))?;
    Ok(record)
}

// ---- RPC surface ----------------------------------------------------------

pub struct DiscoveryService {
    registry: Arc<Registry>,
    clock: Clock,
}

impl DiscoveryService {
    pub fn new(registry: Arc<Registry>, clock: Clock) -> Self {
        DiscoveryService { registry, clock }
    }
}

pub fn record_to_value(live: &LiveRecord) -> RpcValue {
    structure([
        ("name", RpcValue::string(&live.record.name)),
        ("host_url", RpcValue::string(&live.record.host_url)),
        (
            "methods",
            RpcValue::Array(
                live.record
                    .methods
                    .iter()
                    .map(|m| RpcValue::string(m.as_str()))
                    .collect(),
            ),
        ),
        (
            "attrs",
            RpcValue::Struct(
                live.record
                    .attrs
                    .iter()
                    .map(|(k, v)| (k.clone(), RpcValue::string(v.as_str())))
                    .collect(),
            ),
        ),
        ("ttl_s", RpcValue::Int(live.record.ttl_s as i32)),
        (
            "registered_at",
            RpcValue::Double(live.registered_at_ms as f64 / 1000.0),
        ),
    ])
}

fn record_from_value(v: &RpcValue) -> Result<ServiceRecord, Fault> {
    let m = v
        .as_struct()
        .ok_or_else(|| Fault::bad_params("record must be a struct"))?;
    let ttl = field_i32(m, "ttl_s")?;
    if ttl <= 0 {
        return Err(Fault::bad_params("ttl_s must be > 0"));
    }
    let methods = match m.get("methods") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .ok_or_else(|| Fault::bad_params("methods must be an array"))?
            .iter()
            .map(|item| {
                item.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Fault::bad_params("methods must contain strings"))
            })
            .collect::<Result<_, _>>()?,
    };
    let attrs = match m.get("attrs") {
        None => BTreeMap::new(),
        Some(v) => v
            .as_struct()
            .ok_or_else(|| Fault::bad_params("attrs must be a struct"))?
            .iter()
            .map(|(k, v)| {
                v.as_str()
                    .map(|s| (k.clone(), s.to_string()))
                    .ok_or_else(|| Fault::bad_params("attrs must map to strings"))
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(ServiceRecord {
        name: field_str(m, "name")?.to_string(),
        host_url: field_str(m, "host_url")?.to_string(),
        methods,
        attrs,
        ttl_s: ttl as u32,
    })
}

fn attr_filter_from(params: &[RpcValue], idx: usize) -> Result<BTreeMap<String, String>, Fault> {
    match params.get(idx) {
        None => Ok(BTreeMap::new()),
        Some(v) => {
            let m = v
                .as_struct()
                .ok_or_else(|| Fault::bad_params("attr filter must be a struct"))?;
            m.iter()
                .map(|(k, v)| {
                    v.as_str()
                        .map(|s| (k.clone(), s.to_string()))
                        .ok_or_else(|| Fault::bad_params("attr filter values must be strings"))
                })
                .collect()
        }
    }
}

#[async_trait]
impl ServicePlugin for DiscoveryService {
    fn service(&self) -> &'static str {
        "discovery"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["register", "deregister", "find", "find_server"]
    }

    async fn call(
        &self,
        _ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        let now = (self.clock)();
        match method {
            "register" => {
                let record = record_from_value(need(params, 0)?)?;
                self.registry.register(record, Origin::Local, now)?;
                Ok(RpcValue::Bool(true))
            }
            "deregister" => {
                let name = need_str(params, 0)?;
                let host = need_str(params, 1)?;
                Ok(RpcValue::Bool(self.registry.deregister(name, host, now)))
            }
            "find" => {
                let pattern = need_str(params, 0)?;
                let filter = attr_filter_from(params, 1)?;
                Ok(RpcValue::Array(
                    self.registry
                        .find(pattern, &filter, now)
                        .iter()
                        .map(record_to_value)
                        .collect(),
                ))
            }
            "find_server" => {
                let pattern = need_str(params, 0)?;
                let filter = attr_filter_from(params, 1)?;
                Ok(RpcValue::Array(
                    self.registry
                        .find_server(pattern, &filter, now)
                        .into_iter()
                        .map(RpcValue::Str)
                        .collect(),
                ))
            }
            other => Err(Fault::no_such_method(other)),
        }
    }
}
