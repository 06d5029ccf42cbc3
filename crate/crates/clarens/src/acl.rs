//! Access control: ordered first-match ACL entries over `service.method`
//! globs, with group subjects so sets of users are managed as one entity.
//!
//! Evaluation is deny-by-default. Two methods are whitelisted so a fresh
//! server stays introspectable before any ACL exists: `system.list_methods`
//! and `echo.echo`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::auth::Principal;
use crate::fault::Fault;
use crate::glob::glob_match;
use crate::journal::{Journal, JournalEvent};

/// Methods callable by anyone, always.
pub const BOOTSTRAP_WHITELIST: &[&str] = &["system.list_methods", "echo.echo"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Dn(String),
    Group(String),
    Anonymous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    /// Glob over `service.method`, `*` wildcard.
    pub pattern: String,
    pub subject: Subject,
    pub allow: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub members: BTreeSet<String>,
}

#[derive(Default)]
struct AclState {
    entries: Vec<AclEntry>,
    groups: BTreeMap<String, BTreeSet<String>>,
}

/// Shared ACL and group store. Concurrent readers, exclusive writers;
/// mutations are journaled and immediately visible to subsequent checks.
pub struct AclStore {
    state: RwLock<AclState>,
    journal: Arc<Journal>,
}

fn subject_matches(
    subject: &Subject,
    principal: &Principal,
    groups: &BTreeMap<String, BTreeSet<String>>,
) -> bool {
    match subject {
        Subject::Anonymous => principal.anonymous,
        Subject::Dn(dn) => !principal.anonymous && principal.dn == *dn,
        // A dangling group reference simply never matches.
        Subject::Group(name) => {
            !principal.anonymous
                && groups
                    .get(name)
                    .is_some_and(|members| members.contains(&principal.dn))
        }
    }
}

/// Pure first-match evaluation over an entry list; exposed so callers (and
/// tests) can evaluate an ACL without a store.
pub fn check_entries(
    principal: &Principal,
    method: &str,
    entries: &[AclEntry],
    groups: &BTreeMap<String, BTreeSet<String>>,
) -> bool {
    if BOOTSTRAP_WHITELIST.contains(&method) {
        return true;
    }
    for entry in entries {
        if glob_match(&entry.pattern, method) && subject_matches(&entry.subject, principal, groups)
        {
            return entry.allow;
        }
    }
    false
}

impl AclStore {
    pub fn new(journal: Arc<Journal>) -> Self {
        AclStore {
            state: RwLock::new(AclState::default()),
            journal,
        }
    }

    /// Applies a replayed journal event without re-journaling it.
    /// Non-ACL events are ignored.
    pub fn replay(&self, event: &JournalEvent) {
        let mut s = self.state.write();
        match event {
            JournalEvent::AclAdd { entry } => s.entries.push(entry.clone()),
            JournalEvent::AclRemove { index } => {
                if *index < s.entries.len() {
                    s.entries.remove(*index);
                }
            }
            JournalEvent::GroupCreate { name } => {
                s.groups.entry(name.clone()).or_default();
            }
            JournalEvent::GroupDelete { name } => {
                s.groups.remove(name);
            }
            JournalEvent::GroupAdd { name, dn } => {
                if let Some(members) = s.groups.get_mut(name) {
                    members.insert(dn.clone());
                }
            }
            JournalEvent::GroupRemove { name, dn } => {
                if let Some(members) = s.groups.get_mut(name) {
                    members.remove(dn);
                }
            }
            _ => {}
        }
    }

    pub fn check(&self, principal: &Principal, method: &str) -> bool {
        let s = self.state.read();
        check_entries(principal, method, &s.entries, &s.groups)
    }

    pub fn acl_add(&self, entry: AclEntry) -> Result<(), Fault> {
        if entry.pattern.is_empty() {
            return Err(Fault::bad_params("ACL pattern must be non-empty"));
        }
        let mut s = self.state.write();
        s.entries.push(entry.clone());
        self.journal.append(&JournalEvent::AclAdd { entry });
        Ok(())
    }

    pub fn acl_remove(&self, index: usize) -> Result<AclEntry, Fault> {
        let mut s = self.state.write();
        if index >= s.entries.len() {
            return Err(Fault::not_found(format!("no ACL entry at index {index}")));
        }
        let removed = s.entries.remove(index);
        self.journal.append(&JournalEvent::AclRemove { index });
        Ok(removed)
    }

    pub fn acl_list(&self) -> Vec<AclEntry> {
        self.state.read().entries.clone()
    }

    pub fn group_create(&self, name: &str) -> Result<(), Fault> {
        if name.is_empty() {
            return Err(Fault::bad_params("group name must be non-empty"));
        }
        let mut s = self.state.write();
        if s.groups.contains_key(name) {
            return Err(Fault::conflict(format!("group {name:?} already exists")));
        }
        s.groups.insert(name.to_string(), BTreeSet::new());
        self.journal
            .append(&JournalEvent::GroupCreate { name: name.to_string() });
        Ok(())
    }

    pub fn group_delete(&self, name: &str) -> Result<(), Fault> {
        let mut s = self.state.write();
        if s.groups.remove(name).is_none() {
            return Err(Fault::not_found(format!("no group {name:?}")));
        }
        self.journal
            .append(&JournalEvent::GroupDelete { name: name.to_string() });
        Ok(())
    }

    /// Idempotent: adding a present member is not an error.
    pub fn group_add(&self, name: &str, dn: &str) -> Result<(), Fault> {
        let mut s = self.state.write();
        let members = s
            .groups
            .get_mut(name)
            .ok_or_else(|| Fault::not_found(format!("no group {name:?}")))?;
        members.insert(dn.to_string());
        self.journal.append(&JournalEvent::GroupAdd {
            name: name.to_string(),
            dn: dn.to_string(),
        });
        Ok(())
    }

    /// Returns whether the member was present.
    pub fn group_remove(&self, name: &str, dn: &str) -> Result<bool, Fault> {
        let mut s = self.state.write();
        let members = s
            .groups
            .get_mut(name)
            .ok_or_else(|| Fault::not_found(format!("no group {name:?}")))?;
        let removed = members.remove(dn);
        self.journal.append(&JournalEvent::GroupRemove {
            name: name.to_string(),
            dn: dn.to_string(),
        });
        Ok(removed)
    }

    pub fn group_list(&self) -> Vec<Group> {
        self.state
            .read()
            .groups
            .iter()
            .map(|(name, members)| Group {
                name: name.clone(),
                members: members.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{CONFLICT, NOT_FOUND};
    use proptest::prelude::*;

    fn store() -> AclStore {
        AclStore::new(Arc::new(Journal::disabled()))
    }

    fn alice() -> Principal {
        Principal::authenticated("/CN=Alice", None)
    }

    #[test]
    fn deny_by_default() {
        let s = store();
        assert!(!s.check(&alice(), "shell.cmd"));
        assert!(!s.check(&Principal::anonymous(), "shell.cmd"));
    }

    #[test]
    fn bootstrap_whitelist_always_allowed() {
        let s = store();
        assert!(s.check(&Principal::anonymous(), "system.list_methods"));
        assert!(s.check(&alice(), "echo.echo"));
        // Even an explicit deny does not override the whitelist.
        s.acl_add(AclEntry {
            pattern: "*".into(),
            subject: Subject::Dn("/CN=Alice".into()),
            allow: false,
        })
        .unwrap();
        assert!(s.check(&alice(), "echo.echo"));
    }

    #[test]
    fn group_grant() {
        let s = store();
        s.group_create("ops").unwrap();
        s.group_add("ops", "/CN=Alice").unwrap();
        s.acl_add(AclEntry {
            pattern: "shell.*".into(),
            subject: Subject::Group("ops".into()),
            allow: true,
        })
        .unwrap();
        assert!(s.check(&alice(), "shell.cmd"));
        assert!(!s.check(&alice(), "file.get"));
        assert!(!s.check(&Principal::authenticated("/CN=Bob", None), "shell.cmd"));
    }

    #[test]
    fn first_match_wins_over_later_grant() {
        // Deny-Alice listed before an ops-wide grant: the deny decides.
        let s = store();
        s.group_create("ops").unwrap();
        s.group_add("ops", "/CN=Alice").unwrap();
        s.acl_add(AclEntry {
            pattern: "*".into(),
            subject: Subject::Dn("/CN=Alice".into()),
            allow: false,
        })
        .unwrap();
        s.acl_add(AclEntry {
            pattern: "*".into(),
            subject: Subject::Group("ops".into()),
            allow: true,
        })
        .unwrap();
        assert!(!s.check(&alice(), "shell.cmd"));
    }

    #[test]
    fn dangling_group_never_matches() {
        let s = store();
        s.acl_add(AclEntry {
            pattern: "*".into(),
            subject: Subject::Group("ghosts".into()),
            allow: true,
        })
        .unwrap();
        assert!(!s.check(&alice(), "shell.cmd"));
    }

    #[test]
    fn anonymous_subject_matches_only_anonymous() {
        let s = store();
        s.acl_add(AclEntry {
            pattern: "discovery.*".into(),
            subject: Subject::Anonymous,
            allow: true,
        })
        .unwrap();
        assert!(s.check(&Principal::anonymous(), "discovery.find"));
        assert!(!s.check(&alice(), "discovery.find"));
    }

    #[test]
    fn group_lifecycle_faults() {
        let s = store();
        s.group_create("ops").unwrap();
        assert_eq!(s.group_create("ops").unwrap_err().code, CONFLICT);
        assert_eq!(s.group_add("nope", "/CN=A").unwrap_err().code, NOT_FOUND);
        s.group_add("ops", "/CN=A").unwrap();
        s.group_add("ops", "/CN=A").unwrap(); // idempotent
        assert_eq!(s.group_list()[0].members.len(), 1);
        assert!(s.group_remove("ops", "/CN=A").unwrap());
        assert!(!s.group_remove("ops", "/CN=A").unwrap());
        s.group_delete("ops").unwrap();
        assert_eq!(s.group_delete("ops").unwrap_err().code, NOT_FOUND);
    }

    #[test]
    fn acl_remove_bounds() {
        let s = store();
        assert_eq!(s.acl_remove(0).unwrap_err().code, NOT_FOUND);
    }

    #[test]
    fn replay_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        {
            let (journal, _) = Journal::open(&path).unwrap();
            let s = AclStore::new(Arc::new(journal));
            s.group_create("ops").unwrap();
            s.group_add("ops", "/CN=Alice").unwrap();
            s.acl_add(AclEntry {
                pattern: "shell.*".into(),
                subject: Subject::Group("ops".into()),
                allow: true,
            })
            .unwrap();
            s.acl_add(AclEntry {
                pattern: "*".into(),
                subject: Subject::Dn("/CN=Bob".into()),
                allow: true,
            })
            .unwrap();
            s.acl_remove(1).unwrap();
        }
        let (journal, events) = Journal::open(&path).unwrap();
        let s = AclStore::new(Arc::new(journal));
        for e in &events {
            s.replay(e);
        }
        assert!(s.check(&alice(), "shell.cmd"));
        assert!(!s.check(&Principal::authenticated("/CN=Bob", None), "shell.cmd"));
        assert_eq!(s.acl_list().len(), 1);
    }

    /// Group transparency: a dn-subject entry and a group-subject entry whose
    /// group holds exactly that dn are interchangeable.
    #[test]
    fn group_transparency() {
        let methods = ["shell.cmd", "file.get", "dls.locate", "system.whoami"];
        let direct = store();
        direct
            .acl_add(AclEntry {
                pattern: "shell.*".into(),
                subject: Subject::Dn("/CN=Alice".into()),
                allow: true,
            })
            .unwrap();
        let via_group = store();
        via_group.group_create("solo").unwrap();
        via_group.group_add("solo", "/CN=Alice").unwrap();
        via_group
            .acl_add(AclEntry {
                pattern: "shell.*".into(),
                subject: Subject::Group("solo".into()),
                allow: true,
            })
            .unwrap();
        for m in methods {
            assert_eq!(direct.check(&alice(), m), via_group.check(&alice(), m), "{m}");
        }
    }

    /// Independent naive oracle: scan entries in order, first match decides.
    fn oracle(
        principal: &Principal,
        method: &str,
        entries: &[AclEntry],
        groups: &BTreeMap<String, BTreeSet<String>>,
    ) -> bool {
        if method == "system.list_methods" || method == "echo.echo" {
            return true;
        }
        entries
            .iter()
            .find(|e| {
                glob_match(&e.pattern, method)
                    && match &e.subject {
                        Subject::Anonymous => principal.anonymous,
                        Subject::Dn(d) => !principal.anonymous && &principal.dn == d,
                        Subject::Group(g) => {
                            !principal.anonymous
                                && groups.get(g).map(|m| m.contains(&principal.dn)) == Some(true)
                        }
                    }
            })
            .map(|e| e.allow)
            .unwrap_or(false)
    }

    fn arb_subject() -> impl Strategy<Value = Subject> {
        prop_oneof![
            "[abc]{1,2}".prop_map(|s| Subject::Dn(format!("/CN={s}"))),
            "[gh]".prop_map(Subject::Group),
            Just(Subject::Anonymous),
        ]
    }

    fn arb_entry() -> impl Strategy<Value = AclEntry> {
        ("[a-c*.]{1,6}", arb_subject(), any::<bool>()).prop_map(|(pattern, subject, allow)| {
            AclEntry {
                pattern,
                subject,
                allow,
            }
        })
    }

    proptest! {
        #[test]
        fn first_match_agrees_with_oracle(
            entries in proptest::collection::vec(arb_entry(), 0..20),
            group_members in proptest::collection::btree_set("[abc]{1,2}", 0..4),
            dn in "[abc]{1,2}",
            method in "[a-c]{1,3}\\.[a-c]{1,3}",
            anonymous in any::<bool>(),
        ) {
            let mut groups = BTreeMap::new();
            groups.insert(
                "g".to_string(),
                group_members.iter().map(|s| format!("/CN={s}")).collect::<BTreeSet<_>>(),
            );
            let principal = if anonymous {
                Principal::anonymous()
            } else {
                Principal::authenticated(format!("/CN={dn}"), None)
            };
            prop_assert_eq!(
                check_entries(&principal, &method, &entries, &groups),
                oracle(&principal, &method, &entries, &groups)
            );
        }
    }
}
