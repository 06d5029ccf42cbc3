//! Service plugin interface and the method dispatcher.
//!
//! Every service is a plugin bound at startup; the dispatcher routes
//! `service.method` calls through the ACL check and wraps whatever the
//! plugin does — including panics — as an in-band RPC outcome.

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::sync::Arc;

use async_trait::async_trait;
use futures::FutureExt;

use crate::acl::AclStore;
use crate::auth::Principal;
use crate::fault::Fault;
use crate::rpc::{split_method, RpcCall, RpcResponse};
use crate::value::RpcValue;

/// Per-call context handed to plugins.
pub struct CallContext {
    pub principal: Principal,
    /// Remote peer address, when the call arrived over HTTP.
    pub peer: Option<IpAddr>,
    /// All `service.method` names currently bound, sorted.
    pub bound_methods: Arc<Vec<String>>,
}

#[async_trait]
pub trait ServicePlugin: Send + Sync {
    fn service(&self) -> &'static str;
    /// Method names within this service.
    fn methods(&self) -> Vec<&'static str>;
    /// Plugins must be safe for concurrent invocation; the dispatcher
    /// serializes nothing.
    async fn call(
        &self,
        ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault>;
}

/// Routes calls to bound plugins. Built once at startup; no hot reload.
pub struct Dispatcher {
    plugins: BTreeMap<String, Arc<dyn ServicePlugin>>,
    acl: Arc<AclStore>,
    bound_methods: Arc<Vec<String>>,
}

impl Dispatcher {
    pub fn new(plugins: Vec<Arc<dyn ServicePlugin>>, acl: Arc<AclStore>) -> Self {
        let mut map = BTreeMap::new();
        let mut methods = Vec::new();
        for plugin in plugins {
            for m in plugin.methods() {
                methods.push(format!("{}.{}", plugin.service(), m));
            }
            map.insert(plugin.service().to_string(), plugin);
        }
        methods.sort();
        methods.dedup();
        Dispatcher {
            plugins: map,
            acl,
            bound_methods: Arc::new(methods),
        }
    }

    pub fn bound_methods(&self) -> Arc<Vec<String>> {
        Arc::clone(&self.bound_methods)
    }

    pub fn acl(&self) -> &Arc<AclStore> {
        &self.acl
    }

    /// Full dispatch: ACL check, plugin lookup, invocation. All failures,
    /// including plugin panics, come back as faults.
    pub async fn dispatch(&self, call: &RpcCall, peer: Option<IpAddr>) -> RpcResponse {
        let principal = call.principal.clone().unwrap_or_else(Principal::anonymous);
        let outcome = self.dispatch_inner(&principal, call, peer).await;
        match outcome {
            Ok(v) => RpcResponse::value(v, call.call_id.clone()),
            Err(f) => RpcResponse::fault(f, call.call_id.clone()),
        }
    }

    async fn dispatch_inner(
        &self,
        principal: &Principal,
        call: &RpcCall,
        peer: Option<IpAddr>,
    ) -> Result<RpcValue, Fault> {
        let (service, method) = split_method(&call.method)
            .ok_or_else(|| Fault::bad_method(format!("bad method name: {:?}", call.method)))?;
        if !self.acl.check(principal, &call.method) {
            return Err(Fault::access_denied(format!(
                "principal {:?} may not call {}",
                principal.dn, call.method
            )));
        }
        let plugin = self
            .plugins
            .get(service)
            .ok_or_else(|| Fault::no_such_service(service))?;
        if !plugin.methods().contains(&method) {
            return Err(Fault::no_such_method(&call.method));
        }
        let ctx = CallContext {
            principal: principal.clone(),
            peer,
            bound_methods: self.bound_methods(),
        };
        let fut = plugin.call(&ctx, method, &call.params);
        match std::panic::AssertUnwindSafe(fut).catch_unwind().await {
            Ok(result) => result,
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "plugin panicked".to_string());
                tracing::error!("plugin {service} panicked: {msg}");
                Err(Fault::internal(format!("internal error in {service}: {msg}")))
            }
        }
    }
}

/// Identity service used as the conformance probe for both encodings.
pub struct EchoService;

#[async_trait]
impl ServicePlugin for EchoService {
    fn service(&self) -> &'static str {
        "echo"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["echo"]
    }

    async fn call(
        &self,
        _ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "echo" => match params {
                [v] => Ok(v.clone()),
                _ => Err(Fault::bad_params("echo takes exactly one value")),
            },
            _ => Err(Fault::no_such_method(method)),
        }
    }
}

// ---- parameter extraction helpers ----------------------------------------

pub fn need(params: &[RpcValue], idx: usize) -> Result<&RpcValue, Fault> {
    params
        .get(idx)
        .ok_or_else(|| Fault::bad_params(format!("missing parameter {idx}")))
}

pub fn need_str<'p>(params: &'p [RpcValue], idx: usize) -> Result<&'p str, Fault> {
    need(params, idx)?
        .as_str()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be a string")))
}

pub fn need_i32(params: &[RpcValue], idx: usize) -> Result<i32, Fault> {
    need(params, idx)?
        .as_i32()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be an int")))
}

pub fn need_bool(params: &[RpcValue], idx: usize) -> Result<bool, Fault> {
    need(params, idx)?
        .as_bool()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be a boolean")))
}

pub fn need_f64(params: &[RpcValue], idx: usize) -> Result<f64, Fault> {
    need(params, idx)?
        .as_f64()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be a number")))
}

pub fn need_struct<'p>(
    params: &'p [RpcValue],
    idx: usize,
) -> Result<&'p BTreeMap<String, RpcValue>, Fault> {
    need(params, idx)?
        .as_struct()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be a struct")))
}

pub fn need_bytes<'p>(params: &'p [RpcValue], idx: usize) -> Result<&'p [u8], Fault> {
    need(params, idx)?
        .as_bytes()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be base64 bytes")))
}

pub fn field_str<'m>(m: &'m BTreeMap<String, RpcValue>, key: &str) -> Result<&'m str, Fault> {
    m.get(key)
        .and_then(RpcValue::as_str)
        .ok_or_else(|| Fault::bad_params(format!("struct field {key:?} must be a string")))
}

pub fn field_i32(m: &BTreeMap<String, RpcValue>, key: &str) -> Result<i32, Fault> {
    m.get(key)
        .and_then(RpcValue::as_i32)
        .ok_or_else(|| Fault::bad_params(format!("struct field {key:?} must be an int")))
}

pub fn field_f64(m: &BTreeMap<String, RpcValue>, key: &str) -> Result<f64, Fault> {
    m.get(key)
        .and_then(RpcValue::as_f64)
        .ok_or_else(|| Fault::bad_params(format!("struct field {key:?} must be a number")))
}

/// Builds a struct value from `(key, value)` pairs.
pub fn structure<I>(pairs: I) -> RpcValue
where
    I: IntoIterator<Item = (&'static str, RpcValue)>,
{
    RpcValue::Struct(
        pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journal::Journal;
    use crate::rpc::{Encoding, RpcOutcome};

    fn call(method: &str) -> RpcCall {
        RpcCall {
            encoding: Encoding::JsonRpc,
            method: method.to_string(),
            params: vec![RpcValue::Str("hello".into())],
            call_id: Some("1".into()),
            principal: Some(Principal::authenticated("/CN=T", None)),
        }
    }

    fn dispatcher() -> Dispatcher {
        let acl = Arc::new(AclStore::new(Arc::new(Journal::disabled())));
        Dispatcher::new(vec![Arc::new(EchoService)], acl)
    }

    #[tokio::test]
    async fn echo_roundtrip() {
        let d = dispatcher();
        let resp = d.dispatch(&call("echo.echo"), None).await;
        assert_eq!(resp.outcome, RpcOutcome::Value(RpcValue::Str("hello".into())));
        assert_eq!(resp.call_id.as_deref(), Some("1"));
    }

    #[tokio::test]
    async fn unknown_service_fault_200() {
        let d = dispatcher();
        let resp = d.dispatch(&call("nosuch.method"), None).await;
        match resp.outcome {
            RpcOutcome::Fault(f) => assert_eq!(f.code, crate::fault::ACCESS_DENIED),
            _ => panic!(),
        }
        // With an ACL grant the service lookup itself reports 200.
        d.acl()
            .acl_add(crate::acl::AclEntry {
                pattern: "*".into(),
                subject: crate::acl::Subject::Dn("/CN=T".into()),
                allow: true,
            })
            .unwrap();
        let resp = d.dispatch(&call("nosuch.method"), None).await;
        match resp.outcome {
            RpcOutcome::Fault(f) => assert_eq!(f.code, crate::fault::NO_SUCH_SERVICE),
            _ => panic!(),
        }
    }

    #[tokio::test]
    async fn unknown_method_fault_201() {
        let d = dispatcher();
        d.acl()
            .acl_add(crate::acl::AclEntry {
                pattern: "*".into(),
                subject: crate::acl::Subject::Dn("/CN=T".into()),
                allow: true,
            })
            .unwrap();
        let resp = d.dispatch(&call("echo.nosuch"), None).await;
        match resp.outcome {
            RpcOutcome::Fault(f) => assert_eq!(f.code, crate::fault::NO_SUCH_METHOD),
            _ => panic!(),
        }
    }

    #[tokio::test]
    async fn deny_by_default_fault_100() {
        let d = dispatcher();
        let mut c = call("echo.echo");
        c.method = "shell.cmd".into();
        let resp = d.dispatch(&c, None).await;
        match resp.outcome {
            RpcOutcome::Fault(f) => assert_eq!(f.code, crate::fault::ACCESS_DENIED),
            _ => panic!(),
        }
    }

    struct PanickyService;

    #[async_trait]
    impl ServicePlugin for PanickyService {
        fn service(&self) -> &'static str {
            "boom"
        }
        fn methods(&self) -> Vec<&'static str> {
            vec!["go"]
        }
        async fn call(
            &self,
            _ctx: &CallContext,
            _method: &str,
            _params: &[RpcValue],
        ) -> Result<RpcValue, Fault> {
            panic!("kaboom");
        }
    }

    #[tokio::test]
    async fn plugin_panic_becomes_fault_400() {
        let acl = Arc::new(AclStore::new(Arc::new(Journal::disabled())));
        acl.acl_add(crate::acl::AclEntry {
            pattern: "*".into(),
            subject: crate::acl::Subject::Dn("/CN=T".into()),
            allow: true,
        })
        .unwrap();
        let d = Dispatcher::new(vec![Arc::new(PanickyService)], acl);
        let resp = d.dispatch(&call("boom.go"), None).await;
        match resp.outcome {
            RpcOutcome::Fault(f) => {
                assert_eq!(f.code, crate::fault::INTERNAL);
                assert!(f.message.contains("kaboom"));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn bound_methods_sorted_and_deduped() {
        let d = dispatcher();
        let methods = d.bound_methods();
        assert_eq!(*methods, vec!["echo.echo".to_string()]);
    }
}
