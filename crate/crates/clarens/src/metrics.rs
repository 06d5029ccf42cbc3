//! Network measurement store: latest RTT / bandwidth / server-load sample
//! per directed `(src, dst)` pair, fed over RPC and consumed by the data
//! location service.

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::RwLock;

use crate::clock::Clock;
use crate::fault::Fault;
use crate::plugin::{field_f64, field_str, need_str, need_struct, structure, CallContext, ServicePlugin};
use crate::value::RpcValue;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetric {
    pub src: String,
    pub dst: String,
    pub rtt_s: f64,
    pub bandwidth_bps: f64,
    /// Dimensionless load at the destination host.
    pub server_load: f64,
    pub measured_at_s: f64,
}

impl LinkMetric {
    fn validate(&self) -> Result<(), Fault> {
        if self.src.is_empty() || self.dst.is_empty() {
            return Err(Fault::bad_params("src and dst must be non-empty"));
        }
        if !self.rtt_s.is_finite() || self.rtt_s < 0.0 {
            return Err(Fault::bad_params("rtt_s must be >= 0"));
        }
        if !self.bandwidth_bps.is_finite() || self.bandwidth_bps <= 0.0 {
            return Err(Fault::bad_params("bandwidth_Bps must be > 0"));
        }
        if !self.server_load.is_finite() || self.server_load < 0.0 {
            return Err(Fault::bad_params("server_load must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct MetricsStore {
    samples: RwLock<BTreeMap<(String, String), LinkMetric>>,
}

impl MetricsStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last writer wins per directed pair.
    pub fn report(&self, sample: LinkMetric) -> Result<(), Fault> {
        sample.validate()?;
        self.samples
            .write()
            .insert((sample.src.clone(), sample.dst.clone()), sample);
        Ok(())
    }

    pub fn query(&self, src: &str, dst: &str) -> Option<LinkMetric> {
        self.samples
            .read()
            .get(&(src.to_string(), dst.to_string()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.samples.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.read().is_empty()
    }
}

pub struct MetricsService {
    store: Arc<MetricsStore>,
    clock: Clock,
}

impl MetricsService {
    pub fn new(store: Arc<MetricsStore>, clock: Clock) -> Self {
        MetricsService { store, clock }
    }
}

#[async_trait]
impl ServicePlugin for MetricsService {
    fn service(&self) -> &'static str {
        "metrics"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["report", "query"]
    }

    async fn call(
        &self,
        _ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "report" => {
                let m = need_struct(params, 0)?;
                let sample = LinkMetric {
                    src: field_str(m, "src")?.to_string(),
                    dst: field_str(m, "dst")?.to_string(),
                    rtt_s: field_f64(m, "rtt_s")?,
                    bandwidth_bps: field_f64(m, "bandwidth_Bps")?,
                    server_load: m
                        .get("server_load")
                        .and_then(RpcValue::as_f64)
                        .unwrap_or(0.0),
                    measured_at_s: m
                        .get("measured_at")
                        .and_then(RpcValue::as_f64)
                        .unwrap_or_else(|| (self.clock)() as f64 / 1000.0),
                };
                self.store.report(sample)?;
                Ok(RpcValue::Bool(true))
            }
            "query" => {
                let src = need_str(params, 0)?;
                let dst = need_str(params, 1)?;
                match self.store.query(src, dst) {
                    Some(s) => Ok(structure([
                        ("src", RpcValue::string(&s.src)),
                        ("dst", RpcValue::string(&s.dst)),
                        ("rtt_s", RpcValue::Double(s.rtt_s)),
                        ("bandwidth_Bps", RpcValue::Double(s.bandwidth_bps)),
                        ("server_load", RpcValue::Double(s.server_load)),
                        ("measured_at", RpcValue::Double(s.measured_at_s)),
                    ])),
                    // Absence is a legal answer, not a fault.
                    None => Ok(RpcValue::Struct(Default::default())),
                }
            }
            other => Err(Fault::no_such_method(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(src: &str, dst: &str, rtt: f64, bw: f64) -> LinkMetric {
        LinkMetric {
            src: src.into(),
            dst: dst.into(),
            rtt_s: rtt,
            bandwidth_bps: bw,
            server_load: 0.0,
            measured_at_s: 0.0,
        }
    }

    #[test]
    fn report_then_query() {
        let store = MetricsStore::new();
        store.report(sample("A", "B", 0.05, 1e7)).unwrap();
        assert_eq!(store.query("A", "B").unwrap().rtt_s, 0.05);
    }

    #[test]
    fn second_report_wins() {
        let store = MetricsStore::new();
        store.report(sample("A", "B", 0.05, 1e7)).unwrap();
        store.report(sample("A", "B", 0.09, 2e7)).unwrap();
        let m = store.query("A", "B").unwrap();
        assert_eq!(m.rtt_s, 0.09);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn directional() {
        let store = MetricsStore::new();
        store.report(sample("A", "B", 0.05, 1e7)).unwrap();
        assert!(store.query("B", "A").is_none());
    }

    #[test]
    fn invalid_samples_rejected() {
        let store = MetricsStore::new();
        assert_eq!(
            store.report(sample("A", "B", 0.05, 0.0)).unwrap_err().code,
            crate::fault::BAD_PARAMS
        );
        assert_eq!(
            store.report(sample("A", "B", -1.0, 1e6)).unwrap_err().code,
            crate::fault::BAD_PARAMS
        );
        let mut s = sample("A", "B", 0.0, 1e6);
        s.server_load = -0.5;
        assert_eq!(store.report(s).unwrap_err().code, crate::fault::BAD_PARAMS);
        assert!(store.is_empty());
    }

    #[test]
    fn size_counts_distinct_pairs() {
        let store = MetricsStore::new();
        store.report(sample("A", "B", 0.1, 1e6)).unwrap();
        store.report(sample("B", "A", 0.1, 1e6)).unwrap();
        store.report(sample("A", "C", 0.1, 1e6)).unwrap();
        store.report(sample("A", "B", 0.2, 1e6)).unwrap();
        assert_eq!(store.len(), 3);
    }
}
