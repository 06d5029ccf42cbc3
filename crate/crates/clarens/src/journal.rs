//! Append-only state journal: one JSON record per line, replayed at startup.
//!
//! ACL and group mutations, replica access counters and shell job state
//! changes all share the single journal. The registry is deliberately not
//! journaled; it is soft state and repopulates itself.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::acl::AclEntry;
use crate::config::ConfigError;
use crate::shell::CommandJob;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalEvent {
    AclAdd { entry: AclEntry },
    AclRemove { index: usize },
    GroupCreate { name: String },
    GroupDelete { name: String },
    GroupAdd { name: String, dn: String },
    GroupRemove { name: String, dn: String },
    /// One replica access outcome (DLS reliability tracking).
    Access { pfn: String, success: bool },
    /// Shell job snapshot, written on every state change.
    Job { job: CommandJob },
}

pub struct Journal {
    file: Mutex<Option<File>>,
}

impl Journal {
    /// A journal that records nothing (no `journal.path` configured).
    pub fn disabled() -> Self {
        Journal {
            file: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the journal, returning the events already
    /// recorded so the caller can replay them into the stores.
    pub fn open(path: &Path) -> Result<(Journal, Vec<JournalEvent>), ConfigError> {
        let mut events = Vec::new();
        if path.exists() {
            let reader = BufReader::new(
                File::open(path).map_err(|e| ConfigError::Io(format!("{path:?}: {e}")))?,
            );
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| ConfigError::Io(format!("{path:?}: {e}")))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event = serde_json::from_str(&line).map_err(|e| {
                    ConfigError::General(format!("journal {path:?} line {}: {e}", idx + 1))
                })?;
                events.push(event);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ConfigError::Io(format!("{path:?}: {e}")))?;
        Ok((
            Journal {
                file: Mutex::new(Some(file)),
            },
            events,
        ))
    }

    pub fn append(&self, event: &JournalEvent) {
        let mut guard = self.file.lock();
        if let Some(file) = guard.as_mut() {
            let line = serde_json::to_string(event).expect("journal events serialize");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                tracing::error!("journal write failed: {e}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acl::Subject;

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.journal");
        let events = vec![
            JournalEvent::GroupCreate { name: "ops".into() },
            JournalEvent::GroupAdd {
                name: "ops".into(),
                dn: "/CN=Alice".into(),
            },
            JournalEvent::AclAdd {
                entry: AclEntry {
                    pattern: "shell.*".into(),
                    subject: Subject::Group("ops".into()),
                    allow: true,
                },
            },
            JournalEvent::Access {
                pfn: "gsiftp://a/f".into(),
                success: true,
            },
        ];
        {
            let (journal, replayed) = Journal::open(&path).unwrap();
            assert!(replayed.is_empty());
            for e in &events {
                journal.append(e);
            }
        }
        let (_journal, replayed) = Journal::open(&path).unwrap();
        assert_eq!(replayed, events);
    }

    #[test]
    fn corrupt_line_is_startup_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.journal");
        std::fs::write(&path, "{\"op\":\"group_create\",\"name\":\"x\"}\nnot json\n").unwrap();
        assert!(Journal::open(&path).is_err());
    }

    #[test]
    fn disabled_journal_accepts_appends() {
        Journal::disabled().append(&JournalEvent::GroupCreate { name: "x".into() });
    }
}
