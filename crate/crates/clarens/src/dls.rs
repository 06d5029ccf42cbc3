//! Data location service: resolves a logical filename to every known
//! physical replica, scores each one by estimated transfer cost and
//! observed reliability, and returns a ranked, paginated list.
//!
//! The score of a replica is
//!
//! ```text
//! t_est  = rtt + size / bandwidth * (1 + server_load)
//! score  = w_time * t_est / T_max  +  w_rel * (1 - reliability)
//! ```
//!
//! with `T_max` the largest estimate among the candidates (a zero `T_max`
//! contributes nothing) and `reliability = (successes+1)/(successes+failures+2)`,
//! Laplace-smoothed so a fresh replica starts at 0.5. Missing measurements
//! fall back to pessimistic-but-finite defaults, keeping unmeasured replicas
//! usable while favoring measured fast ones. Lower scores rank first; ties
//! break on the pfn.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::RwLock;

use crate::catalog::CatalogEntry;
use crate::fault::Fault;
use crate::journal::{Journal, JournalEvent};
use crate::metrics::MetricsStore;
use crate::plugin::{need_bool, need_i32, need_str, structure, CallContext, ServicePlugin};
use crate::value::RpcValue;

pub const DEFAULT_RTT_S: f64 = 1.0;
pub const DEFAULT_BANDWIDTH_BPS: f64 = 1e6;
pub const DEFAULT_SERVER_LOAD: f64 = 0.0;
pub const MAX_PAGE_SIZE: i32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaLocation {
    pub lfn: String,
    pub pfn: String,
    /// Host id, parsed from the pfn authority.
    pub host: String,
    pub size_b: u64,
    /// Which catalog reported this replica.
    pub catalog_host: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredReplica {
    pub replica: ReplicaLocation,
    pub t_est_s: f64,
    pub reliability: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaStats {
    pub successes: u64,
    pub failures: u64,
}

impl ReplicaStats {
    pub fn reliability(&self) -> f64 {
        (self.successes as f64 + 1.0) / ((self.successes + self.failures) as f64 + 2.0)
    }
}

/// Per-pfn access counters, journaled like the ACL state.
pub struct StatsStore {
    counters: RwLock<BTreeMap<String, ReplicaStats>>,
    journal: Arc<Journal>,
}

impl StatsStore {
    pub fn new(journal: Arc<Journal>) -> Self {
        StatsStore {
            counters: RwLock::new(BTreeMap::new()),
            journal,
        }
    }

    pub fn record(&self, pfn: &str, success: bool) -> ReplicaStats {
        let mut counters = self.counters.write();
        let stats = counters.entry(pfn.to_string()).or_insert(ReplicaStats {
            successes: 0,
            failures: 0,
        });
        if success {
            stats.successes += 1;
        } else {
            stats.failures += 1;
        }
        let snapshot = *stats;
        drop(counters);
        self.journal.append(&JournalEvent::Access {
            pfn: pfn.to_string(),
            success,
        });
        snapshot
    }

    pub fn replay(&self, event: &JournalEvent) {
        if let JournalEvent::Access { pfn, success } = event {
            let mut counters = self.counters.write();
            let stats = counters.entry(pfn.clone()).or_insert(ReplicaStats {
                successes: 0,
                failures: 0,
            });
            if *success {
                stats.successes += 1;
            } else {
                stats.failures += 1;
            }
        }
    }

    pub fn get(&self, pfn: &str) -> ReplicaStats {
        self.counters
            .read()
            .get(pfn)
            .copied()
            .unwrap_or(ReplicaStats {
                successes: 0,
                failures: 0,
            })
    }

    pub fn reliability(&self, pfn: &str) -> f64 {
        self.get(pfn).reliability()
    }
}

/// Extracts the host id from a physical filename URL, preserving case:
/// `gsiftp://StorageA:2811/data/f1` yields `StorageA`.
pub fn host_of_pfn(pfn: &str) -> Option<String> {
    let after_scheme = pfn.split_once("://")?.1;
    let authority = after_scheme.split(['/', '?', '#']).next()?;
    let host_port = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
    let host = if let Some(rest) = host_port.strip_prefix('[') {
        rest.split_once(']')?.0
    } else {
        host_port.split(':').next()?
    };
    if host.is_empty() {
        None
    } else {
        Some(host.to_string())
    }
}

/// Transfer-time estimate for one replica from the client's measurements.
pub fn transfer_estimate_s(
    metrics: &MetricsStore,
    client_host: &str,
    replica_host: &str,
    size_b: u64,
) -> f64 {
    let (rtt, bandwidth, load) = match metrics.query(client_host, replica_host) {
        Some(m) => (m.rtt_s, m.bandwidth_bps, m.server_load),
        None => (DEFAULT_RTT_S, DEFAULT_BANDWIDTH_BPS, DEFAULT_SERVER_LOAD),
    };
    rtt + size_b as f64 / bandwidth * (1.0 + load)
}

/// Scores and ranks replica candidates; pure given the stores' contents.
pub fn score_replicas(
    replicas: Vec<ReplicaLocation>,
    client_host: &str,
    metrics: &MetricsStore,
    stats: &StatsStore,
    w_time: f64,
    w_rel: f64,
) -> Vec<ScoredReplica> {
    let estimates: Vec<f64> = replicas
        .iter()
        .map(|r| transfer_estimate_s(metrics, client_host, &r.host, r.size_b))
        .collect();
    let t_max = estimates.iter().cloned().fold(0.0_f64, f64::max);
    let mut scored: Vec<ScoredReplica> = replicas
        .into_iter()
        .zip(estimates)
        .map(|(replica, t_est_s)| {
            let normalized = if t_max == 0.0 { 0.0 } else { t_est_s / t_max };
            let reliability = stats.reliability(&replica.pfn);
            ScoredReplica {
                score: w_time * normalized + w_rel * (1.0 - reliability),
                t_est_s,
                reliability,
                replica,
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.replica.pfn.cmp(&b.replica.pfn))
    });
    scored
}

/// Where the locate pipeline gets its catalogs. The production source goes
/// through discovery and remote RPC; tests may supply an in-memory one.
#[async_trait]
pub trait CatalogSource: Send + Sync {
    async fn catalog_hosts(&self) -> Vec<String>;
    async fn lookup(&self, host_url: &str, lfn: &str) -> Result<Vec<CatalogEntry>, Fault>;
}

#[derive(Debug)]
pub struct LocateResult {
    pub total: usize,
    pub page: Vec<ScoredReplica>,
    /// Catalogs that could not be reached (skipped, not fatal).
    pub skipped_catalogs: usize,
}

pub struct LocateDeps<'a> {
    pub catalogs: &'a dyn CatalogSource,
    pub metrics: &'a MetricsStore,
    pub stats: &'a StatsStore,
    pub w_time: f64,
    pub w_rel: f64,
}

pub async fn locate(
    lfn: &str,
    client_host: &str,
    page: i32,
    page_size: i32,
    deps: &LocateDeps<'_>,
) -> Result<LocateResult, Fault> {
    if page < 0 {
        return Err(Fault::bad_params("page must be >= 0"));
    }
    if page_size <= 0 || page_size > MAX_PAGE_SIZE {
        return Err(Fault::bad_params(format!(
            "page_size must be in 1..={MAX_PAGE_SIZE}"
        )));
    }

    let mut hosts = deps.catalogs.catalog_hosts().await;
    hosts.sort();
    hosts.dedup();

    let lookups = hosts.iter().map(|host| deps.catalogs.lookup(host, lfn));
    let results = futures::future::join_all(lookups).await;

    let mut skipped = 0usize;
    let mut by_pfn: BTreeMap<String, ReplicaLocation> = BTreeMap::new();
    for (host, result) in hosts.iter().zip(results) {
        match result {
            Ok(entries) => {
                for entry in entries {
                    let Some(replica_host) = host_of_pfn(&entry.pfn) else {
                        continue;
                    };
                    by_pfn.entry(entry.pfn.clone()).or_insert(ReplicaLocation {
                        lfn: entry.lfn,
                        pfn: entry.pfn,
                        host: replica_host,
                        size_b: entry.size_b,
                        catalog_host: host.clone(),
                    });
                }
            }
            Err(f) => {
                tracing::warn!("catalog {host} unreachable: {f}");
                skipped += 1;
            }
        }
    }

    let replicas: Vec<ReplicaLocation> = by_pfn.into_values().collect();
    if replicas.is_empty() {
        return Err(Fault::not_found(format!("no replicas found for {lfn:?}")));
    }
    let scored = score_replicas(
        replicas,
        client_host,
        deps.metrics,
        deps.stats,
        deps.w_time,
        deps.w_rel,
    );
    let total = scored.len();
    let start = (page as usize).saturating_mul(page_size as usize).min(total);
    let end = start.saturating_add(page_size as usize).min(total);
    Ok(LocateResult {
        total,
        page: scored[start..end].to_vec(),
        skipped_catalogs: skipped,
    })
}

// ---- RPC surface ----------------------------------------------------------

pub struct DlsService {
    catalogs: Arc<dyn CatalogSource>,
    metrics: Arc<MetricsStore>,
    stats: Arc<StatsStore>,
    w_time: f64,
    w_rel: f64,
    pub skipped_catalogs_total: AtomicU64,
}

impl DlsService {
    pub fn new(
        catalogs: Arc<dyn CatalogSource>,
        metrics: Arc<MetricsStore>,
        stats: Arc<StatsStore>,
        w_time: f64,
        w_rel: f64,
    ) -> Self {
        DlsService {
            catalogs,
            metrics,
            stats,
            w_time,
            w_rel,
            skipped_catalogs_total: AtomicU64::new(0),
        }
    }
}

pub fn scored_to_value(s: &ScoredReplica) -> RpcValue {
    structure([
        ("lfn", RpcValue::string(&s.replica.lfn)),
        ("pfn", RpcValue::string(&s.replica.pfn)),
        ("host", RpcValue::string(&s.replica.host)),
        ("size_B", RpcValue::Double(s.replica.size_b as f64)),
        ("catalog_host", RpcValue::string(&s.replica.catalog_host)),
        ("t_est_s", RpcValue::Double(s.t_est_s)),
        ("reliability", RpcValue::Double(s.reliability)),
        ("score", RpcValue::Double(s.score)),
    ])
}

#[async_trait]
impl ServicePlugin for DlsService {
    fn service(&self) -> &'static str {
        "dls"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["locate", "record_access"]
    }

    async fn call(
        &self,
        ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "locate" => {
                let lfn = need_str(params, 0)?;
                let page = need_i32(params, 1)?;
                let page_size = need_i32(params, 2)?;
                // Scoring needs the caller's vantage point; default to the
                // connection peer, overridable as a fourth parameter.
                let client_host = match params.get(3) {
                    Some(v) => v
                        .as_str()
                        .ok_or_else(|| Fault::bad_params("client_host must be a string"))?
                        .to_string(),
                    None => ctx
                        .peer
                        .map(|ip| ip.to_string())
                        .unwrap_or_else(|| "unknown".to_string()),
                };
                let deps = LocateDeps {
                    catalogs: self.catalogs.as_ref(),
                    metrics: &self.metrics,
                    stats: &self.stats,
                    w_time: self.w_time,
                    w_rel: self.w_rel,
                };
                let result = locate(lfn, &client_host, page, page_size, &deps).await?;
                self.skipped_catalogs_total
                    .fetch_add(result.skipped_catalogs as u64, Ordering::Relaxed);
                Ok(structure([
                    ("total", RpcValue::Int(result.total as i32)),
                    (
                        "page",
                        RpcValue::Array(result.page.iter().map(scored_to_value).collect()),
                    ),
                ]))
            }
            "record_access" => {
                let pfn = need_str(params, 0)?;
                let success = need_bool(params, 1)?;
                let stats = self.stats.record(pfn, success);
                Ok(structure([
                    ("pfn", RpcValue::string(pfn)),
                    ("successes", RpcValue::Int(stats.successes as i32)),
                    ("failures", RpcValue::Int(stats.failures as i32)),
                    ("reliability", RpcValue::Double(stats.reliability())),
                ]))
            }
            other => Err(Fault::no_such_method(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LinkMetric;

    fn stats() -> StatsStore {
        StatsStore::new(Arc::new(Journal::disabled()))
    }

    fn replica(lfn: &str, pfn: &str, size: u64) -> ReplicaLocation {
        ReplicaLocation {
            lfn: lfn.into(),
            pfn: pfn.into(),
            host: host_of_pfn(pfn).unwrap(),
            size_b: size,
            catalog_host: "cat".into(),
        }
    }

    fn report(metrics: &MetricsStore, src: &str, dst: &str, rtt: f64, bw: f64, load: f64) {
        metrics
            .report(LinkMetric {
                src: src.into(),
                dst: dst.into(),
                rtt_s: rtt,
                bandwidth_bps: bw,
                server_load: load,
                measured_at_s: 0.0,
            })
            .unwrap();
    }

    #[test]
    fn host_parsing() {
        assert_eq!(host_of_pfn("gsiftp://A/f1").as_deref(), Some("A"));
        assert_eq!(
            host_of_pfn("gsiftp://StorageA:2811/data/f1").as_deref(),
            Some("StorageA")
        );
        assert_eq!(
            host_of_pfn("http://user@Host:80/x").as_deref(),
            Some("Host")
        );
        assert_eq!(host_of_pfn("gsiftp://[::1]:2811/f").as_deref(), Some("::1"));
        assert_eq!(host_of_pfn("no-scheme/f1"), None);
        assert_eq!(host_of_pfn("gsiftp:///f1"), None);
    }

    /// The two-replica worked example; expected values computed with an
    /// independent evaluation of the formula.
    #[test]
    fn worked_example_ranking() {
        let metrics = MetricsStore::new();
        report(&metrics, "client", "A", 0.05, 1e7, 0.0);
        report(&metrics, "client", "B", 0.01, 5e6, 0.0);
        let st = stats();
        let scored = score_replicas(
            vec![
                replica("f", "gsiftp://A/f", 100_000_000),
                replica("f", "gsiftp://B/f", 100_000_000),
            ],
            "client",
            &metrics,
            &st,
            1.0,
            1.0,
        );
        assert_eq!(scored[0].replica.host, "A");
        assert!((scored[0].t_est_s - 10.05).abs() < 1e-12);
        assert!((scored[1].t_est_s - 20.01).abs() < 1e-12);
        assert!((scored[0].score - 1.002248875562219).abs() < 1e-9);
        assert!((scored[1].score - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_replica_normalizes_to_one() {
        let metrics = MetricsStore::new();
        let st = stats();
        let scored = score_replicas(
            vec![replica("f", "gsiftp://A/f", 123)],
            "client",
            &metrics,
            &st,
            2.0,
            1.0,
        );
        // t/T_max is exactly 1 regardless of the metric values.
        assert!((scored[0].score - (2.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn ties_break_on_pfn() {
        let metrics = MetricsStore::new();
        let st = stats();
        let scored = score_replicas(
            vec![
                replica("f", "gsiftp://H/b", 10),
                replica("f", "gsiftp://H/a", 10),
            ],
            "client",
            &metrics,
            &st,
            1.0,
            1.0,
        );
        assert_eq!(scored[0].replica.pfn, "gsiftp://H/a");
    }

    #[test]
    fn missing_metrics_use_defaults() {
        let metrics = MetricsStore::new();
        let t = transfer_estimate_s(&metrics, "client", "X", 2_000_000);
        assert!((t - (1.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn laplace_smoothing() {
        let st = stats();
        assert!((st.reliability("fresh") - 0.5).abs() < 1e-12);
        let s = st.record("p", true);
        assert_eq!((s.successes, s.failures), (1, 0));
        assert!((s.reliability() - 2.0 / 3.0).abs() < 1e-12);
        st.record("q", false);
        st.record("q", false);
        st.record("q", false);
        let s = st.record("q", true);
        assert!((s.reliability() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lower_reliability_ranks_later_at_equal_cost() {
        let metrics = MetricsStore::new();
        report(&metrics, "c", "A", 0.1, 1e7, 0.0);
        report(&metrics, "c", "B", 0.1, 1e7, 0.0);
        let st = stats();
        // A: 3 failures, 1 success -> 1/3. B: 4 successes -> 5/6.
        for _ in 0..3 {
            st.record("gsiftp://A/f", false);
        }
        st.record("gsiftp://A/f", true);
        for _ in 0..4 {
            st.record("gsiftp://B/f", true);
        }
        let scored = score_replicas(
            vec![
                replica("f", "gsiftp://A/f", 1000),
                replica("f", "gsiftp://B/f", 1000),
            ],
            "c",
            &metrics,
            &st,
            1.0,
            1.0,
        );
        assert_eq!(scored[0].replica.host, "B");
        assert!(scored[0].score < scored[1].score);
    }

    /// Scaling every transfer estimate by a positive constant leaves the
    /// ordering unchanged (T_max normalization).
    #[test]
    fn ordering_invariant_under_time_scaling() {
        let st = stats();
        st.record("gsiftp://A/f", false);
        st.record("gsiftp://B/f", true);
        let build = |scale: f64| {
            let metrics = MetricsStore::new();
            report(&metrics, "c", "A", 0.2 * scale, 1e7 / scale, 0.0);
            report(&metrics, "c", "B", 0.05 * scale, 5e6 / scale, 0.0);
            report(&metrics, "c", "C", 0.8 * scale, 2e6 / scale, 0.0);
            score_replicas(
                vec![
                    replica("f", "gsiftp://A/f", 5_000_000),
                    replica("f", "gsiftp://B/f", 5_000_000),
                    replica("f", "gsiftp://C/f", 5_000_000),
                ],
                "c",
                &metrics,
                &st,
                1.0,
                1.0,
            )
            .iter()
            .map(|s| s.replica.pfn.clone())
            .collect::<Vec<_>>()
        };
        assert_eq!(build(1.0), build(7.5));
    }

    struct MemSource {
        hosts: Vec<String>,
        entries: Vec<(String, CatalogEntry)>,
        dead: Vec<String>,
    }

    #[async_trait]
    impl CatalogSource for MemSource {
        async fn catalog_hosts(&self) -> Vec<String> {
            self.hosts.clone()
        }
        async fn lookup(&self, host: &str, lfn: &str) -> Result<Vec<CatalogEntry>, Fault> {
            if self.dead.contains(&host.to_string()) {
                return Err(Fault::internal("connection refused"));
            }
            Ok(self
                .entries
                .iter()
                .filter(|(h, e)| h == host && e.lfn == lfn)
                .map(|(_, e)| e.clone())
                .collect())
        }
    }

    fn entry(lfn: &str, pfn: &str, size: u64) -> CatalogEntry {
        CatalogEntry {
            lfn: lfn.into(),
            pfn: pfn.into(),
            size_b: size,
        }
    }

    #[tokio::test]
    async fn locate_paginates_consistently() {
        let source = MemSource {
            hosts: vec!["c1".into()],
            entries: (0..25)
                .map(|i| ("c1".to_string(), entry("f", &format!("gsiftp://H/{i:02}"), 10)))
                .collect(),
            dead: vec![],
        };
        let metrics = MetricsStore::new();
        let st = stats();
        let deps = LocateDeps {
            catalogs: &source,
            metrics: &metrics,
            stats: &st,
            w_time: 1.0,
            w_rel: 1.0,
        };
        let mut pages = Vec::new();
        let mut sizes = Vec::new();
        for page in 0..3 {
            let res = locate("f", "client", page, 10, &deps).await.unwrap();
            assert_eq!(res.total, 25);
            sizes.push(res.page.len());
            pages.extend(res.page.iter().map(|s| s.replica.pfn.clone()));
        }
        assert_eq!(sizes, vec![10, 10, 5]);
        let full = locate("f", "client", 0, 1000, &deps).await.unwrap();
        assert_eq!(
            pages,
            full.page.iter().map(|s| s.replica.pfn.clone()).collect::<Vec<_>>()
        );
        // Past-the-end page is empty, not a fault.
        let res = locate("f", "client", 5, 10, &deps).await.unwrap();
        assert!(res.page.is_empty());
        assert_eq!(res.total, 25);
    }

    #[tokio::test]
    async fn locate_skips_dead_catalogs() {
        let source = MemSource {
            hosts: vec!["alive".into(), "dead".into()],
            entries: vec![
                ("alive".to_string(), entry("f", "gsiftp://A/f", 10)),
                ("dead".to_string(), entry("f", "gsiftp://B/f", 10)),
            ],
            dead: vec!["dead".into()],
        };
        let metrics = MetricsStore::new();
        let st = stats();
        let deps = LocateDeps {
            catalogs: &source,
            metrics: &metrics,
            stats: &st,
            w_time: 1.0,
            w_rel: 1.0,
        };
        let res = locate("f", "client", 0, 10, &deps).await.unwrap();
        assert_eq!(res.total, 1);
        assert_eq!(res.page[0].replica.pfn, "gsiftp://A/f");
        assert_eq!(res.skipped_catalogs, 1);
    }

    #[tokio::test]
    async fn locate_dedups_by_pfn_and_404s_on_empty() {
        let source = MemSource {
            hosts: vec!["c1".into(), "c2".into()],
            entries: vec![
                ("c1".to_string(), entry("f", "gsiftp://A/f", 10)),
                ("c2".to_string(), entry("f", "gsiftp://A/f", 10)),
            ],
            dead: vec![],
        };
        let metrics = MetricsStore::new();
        let st = stats();
        let deps = LocateDeps {
            catalogs: &source,
            metrics: &metrics,
            stats: &st,
            w_time: 1.0,
            w_rel: 1.0,
        };
        let res = locate("f", "client", 0, 10, &deps).await.unwrap();
        assert_eq!(res.total, 1);
        let err = locate("missing", "client", 0, 10, &deps).await.unwrap_err();
        assert_eq!(err.code, crate::fault::NOT_FOUND);
        let err = locate("f", "client", -1, 10, &deps).await.unwrap_err();
        assert_eq!(err.code, crate::fault::BAD_PARAMS);
        let err = locate("f", "client", 0, 1001, &deps).await.unwrap_err();
        assert_eq!(err.code, crate::fault::BAD_PARAMS);
    }
}
