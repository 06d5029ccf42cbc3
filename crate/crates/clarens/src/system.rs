//! Core `system` and `group` services: introspection, identity echo, and
//! the ACL / group management surface. Always bound, on every server.

use std::sync::Arc;

use async_trait::async_trait;

use crate::acl::{AclEntry, AclStore, Subject};
use crate::fault::Fault;
use crate::plugin::{need, need_i32, need_str, structure, CallContext, ServicePlugin};
use crate::value::RpcValue;

pub struct SystemService {
    acl: Arc<AclStore>,
}

impl SystemService {
    pub fn new(acl: Arc<AclStore>) -> Self {
        SystemService { acl }
    }
}

pub fn entry_to_value(e: &AclEntry) -> RpcValue {
    let mut fields = vec![
        ("pattern", RpcValue::string(&e.pattern)),
        ("allow", RpcValue::Bool(e.allow)),
    ];
    match &e.subject {
        Subject::Dn(dn) => fields.push(("dn", RpcValue::string(dn))),
        Subject::Group(g) => fields.push(("group", RpcValue::string(g))),
        Subject::Anonymous => fields.push(("anonymous", RpcValue::Bool(true))),
    }
    structure(fields)
}

pub fn entry_from_value(v: &RpcValue) -> Result<AclEntry, Fault> {
    let m = v
        .as_struct()
        .ok_or_else(|| Fault::bad_params("ACL entry must be a struct"))?;
    let pattern = m
        .get("pattern")
        .and_then(RpcValue::as_str)
        .ok_or_else(|| Fault::bad_params("ACL entry needs a string pattern"))?
        .to_string();
    let allow = m
        .get("allow")
        .and_then(RpcValue::as_bool)
        .ok_or_else(|| Fault::bad_params("ACL entry needs a boolean allow"))?;
    let subject = match (m.get("dn"), m.get("group"), m.get("anonymous")) {
        (Some(dn), None, None) => Subject::Dn(
            dn.as_str()
                .ok_or_else(|| Fault::bad_params("dn must be a string"))?
                .to_string(),
        ),
        (None, Some(g), None) => Subject::Group(
            g.as_str()
                .ok_or_else(|| Fault::bad_params("group must be a string"))?
                .to_string(),
        ),
        (None, None, Some(a)) if a.as_bool() == Some(true) => Subject::Anonymous,
        _ => {
            return Err(Fault::bad_params(
                "ACL entry needs exactly one of dn, group, anonymous=true",
            ))
        }
    };
    Ok(AclEntry {
        pattern,
        subject,
        allow,
    })
}

#[async_trait]
impl ServicePlugin for SystemService {
    fn service(&self) -> &'static str {
        "system"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["list_methods", "whoami", "acl_add", "acl_remove", "acl_list"]
    }

    async fn call(
        &self,
        ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "list_methods" => Ok(RpcValue::Array(
                ctx.bound_methods
                    .iter()
                    .map(|m| RpcValue::string(m.as_str()))
                    .collect(),
            )),
            "whoami" => {
                let p = &ctx.principal;
                let mut fields = vec![
                    ("dn", RpcValue::string(&p.dn)),
                    ("anonymous", RpcValue::Bool(p.anonymous)),
                ];
                if let Some(user) = &p.local_user {
                    fields.push(("local_user", RpcValue::string(user)));
                }
                Ok(structure(fields))
            }
            "acl_add" => {
                let entry = entry_from_value(need(params, 0)?)?;
                self.acl.acl_add(entry)?;
                Ok(RpcValue::Bool(true))
            }
            "acl_remove" => {
                let index = need_i32(params, 0)?;
                if index < 0 {
                    return Err(Fault::bad_params("index must be >= 0"));
                }
                let removed = self.acl.acl_remove(index as usize)?;
                Ok(entry_to_value(&removed))
            }
            "acl_list" => Ok(RpcValue::Array(
                self.acl.acl_list().iter().map(entry_to_value).collect(),
            )),
            other => Err(Fault::no_such_method(other)),
        }
    }
}

pub struct GroupService {
    acl: Arc<AclStore>,
}

impl GroupService {
    pub fn new(acl: Arc<AclStore>) -> Self {
        GroupService { acl }
    }
}

#[async_trait]
impl ServicePlugin for GroupService {
    fn service(&self) -> &'static str {
        "group"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["create", "delete", "add", "remove", "list"]
    }

    async fn call(
        &self,
        _ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "create" => {
                self.acl.group_create(need_str(params, 0)?)?;
                Ok(RpcValue::Bool(true))
            }
            "delete" => {
                self.acl.group_delete(need_str(params, 0)?)?;
                Ok(RpcValue::Bool(true))
            }
            "add" => {
                self.acl
                    .group_add(need_str(params, 0)?, need_str(params, 1)?)?;
                Ok(RpcValue::Bool(true))
            }
            "remove" => Ok(RpcValue::Bool(
                self.acl
                    .group_remove(need_str(params, 0)?, need_str(params, 1)?)?,
            )),
            "list" => Ok(RpcValue::Array(
                self.acl
                    .group_list()
                    .iter()
                    .map(|g| {
                        structure([
                            ("name", RpcValue::string(&g.name)),
                            (
                                "members",
                                RpcValue::Array(
                                    g.members
                                        .iter()
                                        .map(|dn| RpcValue::string(dn.as_str()))
                                        .collect(),
                                ),
                            ),
                        ])
                    })
                    .collect(),
            )),
            other => Err(Fault::no_such_method(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::Principal;
    use crate::journal::Journal;

    fn ctx(dn: &str) -> CallContext {
        CallContext {
            principal: Principal::authenticated(dn, Some("alice".into())),
            peer: None,
            bound_methods: Arc::new(vec!["echo.echo".into(), "system.list_methods".into()]),
        }
    }

    #[tokio::test]
    async fn whoami_reflects_principal() {
        let acl = Arc::new(AclStore::new(Arc::new(Journal::disabled())));
        let sys = SystemService::new(acl);
        let v = sys.call(&ctx("/CN=Alice"), "whoami", &[]).await.unwrap();
        let m = v.as_struct().unwrap();
        assert_eq!(m["dn"].as_str(), Some("/CN=Alice"));
        assert_eq!(m["local_user"].as_str(), Some("alice"));
        assert_eq!(m["anonymous"].as_bool(), Some(false));
    }

    #[tokio::test]
    async fn acl_entry_value_roundtrip() {
        for entry in [
            AclEntry {
                pattern: "shell.*".into(),
                subject: Subject::Dn("/CN=A".into()),
                allow: true,
            },
            AclEntry {
                pattern: "*".into(),
                subject: Subject::Group("ops".into()),
                allow: false,
            },
            AclEntry {
                pattern: "discovery.*".into(),
                subject: Subject::Anonymous,
                allow: true,
            },
        ] {
            assert_eq!(entry_from_value(&entry_to_value(&entry)).unwrap(), entry);
        }
    }

    #[tokio::test]
    async fn group_crud_over_rpc_values() {
        let acl = Arc::new(AclStore::new(Arc::new(Journal::disabled())));
        let groups = GroupService::new(Arc::clone(&acl));
        let c = ctx("/CN=Admin");
        groups
            .call(&c, "create", &[RpcValue::string("ops")])
            .await
            .unwrap();
        groups
            .call(
                &c,
                "add",
                &[RpcValue::string("ops"), RpcValue::string("/CN=Alice")],
            )
            .await
            .unwrap();
        let listed = groups.call(&c, "list", &[]).await.unwrap();
        let arr = listed.as_array().unwrap();
        assert_eq!(arr.len(), 1);
        let g = arr[0].as_struct().unwrap();
        assert_eq!(g["name"].as_str(), Some("ops"));
        assert_eq!(
            g["members"].as_array().unwrap()[0].as_str(),
            Some("/CN=Alice")
        );
        let err = groups
            .call(&c, "create", &[RpcValue::string("ops")])
            .await
            .unwrap_err();
        assert_eq!(err.code, crate::fault::CONFLICT);
    }
}
