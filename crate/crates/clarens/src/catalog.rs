//! Dataset catalog: maps logical filenames to the physical replicas this
//! catalog knows about. Co-hostable plugin; the data location service finds
//! catalog instances through discovery and queries each one.

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::RwLock;

use crate::fault::Fault;
use crate::plugin::{need, need_str, structure, CallContext, ServicePlugin};
use crate::value::RpcValue;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub lfn: String,
    pub pfn: String,
    pub size_b: u64,
}

#[derive(Default)]
pub struct CatalogStore {
    /// lfn -> pfn -> size. One catalog may hold many pfns per lfn.
    entries: RwLock<BTreeMap<String, BTreeMap<String, u64>>>,
}

impl CatalogStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, lfn: &str, pfn: &str, size_b: u64) -> Result<(), Fault> {
        if lfn.is_empty() {
            return Err(Fault::bad_params("lfn must be non-empty"));
        }
        if crate::dls::host_of_pfn(pfn).is_none() {
            return Err(Fault::bad_params(format!(
                "pfn must be a URL with a host: {pfn:?}"
            )));
        }
        self.entries
            .write()
            .entry(lfn.to_string())
            .or_default()
            .insert(pfn.to_string(), size_b);
        Ok(())
    }

    /// Returns whether the pfn was present anywhere.
    pub fn remove(&self, pfn: &str) -> bool {
        let mut entries = self.entries.write();
        let mut removed = false;
        entries.retain(|_, pfns| {
            removed |= pfns.remove(pfn).is_some();
            !pfns.is_empty()
        });
        removed
    }

    pub fn lookup(&self, lfn: &str) -> Vec<CatalogEntry> {
        self.entries
            .read()
            .get(lfn)
            .map(|pfns| {
                pfns.iter()
                    .map(|(pfn, size)| CatalogEntry {
                        lfn: lfn.to_string(),
                        pfn: pfn.clone(),
                        size_b: *size,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub struct CatalogService {
    store: Arc<CatalogStore>,
}

impl CatalogService {
    pub fn new(store: Arc<CatalogStore>) -> Self {
        CatalogService { store }
    }
}

fn size_from(v: &RpcValue) -> Result<u64, Fault> {
    let n = v
        .as_f64()
        .ok_or_else(|| Fault::bad_params("size must be a number"))?;
    if !(0.0..=9.0e15).contains(&n) {
        return Err(Fault::bad_params("size out of range"));
    }
    Ok(n as u64)
}

#[async_trait]
impl ServicePlugin for CatalogService {
    fn service(&self) -> &'static str {
        "catalog"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["lookup", "add", "remove"]
    }

    async fn call(
        &self,
        _ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "lookup" => {
                let lfn = need_str(params, 0)?;
                Ok(RpcValue::Array(
                    self.store
                        .lookup(lfn)
                        .into_iter()
                        .map(|e| {
                            structure([
                                ("lfn", RpcValue::string(e.lfn)),
                                ("pfn", RpcValue::string(e.pfn)),
                                ("size_B", RpcValue::Double(e.size_b as f64)),
                            ])
                        })
                        .collect(),
                ))
            }
            "add" => {
                let lfn = need_str(params, 0)?;
                let pfn = need_str(params, 1)?;
                let size = size_from(need(params, 2)?)?;
                self.store.add(lfn, pfn, size)?;
                Ok(RpcValue::Bool(true))
            }
            "remove" => {
                let pfn = need_str(params, 0)?;
                Ok(RpcValue::Bool(self.store.remove(pfn)))
            }
            other => Err(Fault::no_such_method(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_catalog_lookup() {
        assert!(CatalogStore::new().lookup("f1").is_empty());
    }

    #[test]
    fn add_and_lookup() {
        let c = CatalogStore::new();
        c.add("f1", "gsiftp://A/f1", 100).unwrap();
        let got = c.lookup("f1");
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].pfn, "gsiftp://A/f1");
        assert_eq!(got[0].size_b, 100);
    }

    #[test]
    fn multiple_replicas_per_lfn() {
        let c = CatalogStore::new();
        c.add("f1", "gsiftp://A/f1", 100).unwrap();
        c.add("f1", "gsiftp://B/f1", 100).unwrap();
        assert_eq!(c.lookup("f1").len(), 2);
    }

    #[test]
    fn remove_by_pfn() {
        let c = CatalogStore::new();
        c.add("f1", "gsiftp://A/f1", 100).unwrap();
        assert!(c.remove("gsiftp://A/f1"));
        assert!(!c.remove("gsiftp://A/f1"));
        assert!(c.lookup("f1").is_empty());
    }
}
