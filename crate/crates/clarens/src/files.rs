//! File service: browse, upload and download inside a per-user jail.
//!
//! Every path is interpreted relative to the caller's jail root
//! `<file_root>/<local_user>`. Escapes of any kind — absolute paths, `..`
//! above the root, symlinks pointing outside — are refused with fault 100.
//! Job sandboxes are exposed read-only at `jobs/<id>/`, so command output
//! is retrieved through the same jailed interface.

use std::io::{Read, Seek, SeekFrom};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;

use crate::acl::AclStore;
use crate::fault::Fault;
use crate::plugin::{need, need_bool, need_bytes, need_str, structure, CallContext, ServicePlugin};
use crate::shell::JobTable;
use crate::value::RpcValue;

/// Byte cap per `file.get` call; larger reads page through offset/length.
pub const MAX_GET_LEN: u64 = 1 << 20;

const MAX_SYMLINK_EXPANSIONS: usize = 40;

fn escape(detail: &str) -> Fault {
    Fault::access_denied(format!("path escapes the jail: {detail}"))
}

/// Resolves `rel` against `root`, treating `root` as the filesystem root.
///
/// Lexical `..` handling never pops above the root (popping an empty stack
/// is an escape, not a clamp), and symlinks among the existing components
/// are expanded with the same rule, so a link pointing outside the jail is
/// caught whether or not its target exists. Absolute inputs and absolute
/// link targets are refused outright.
pub fn jail_resolve(root: &Path, rel: &str) -> Result<PathBuf, Fault> {
    let mut pending: std::collections::VecDeque<std::ffi::OsString> = Path::new(rel)
        .components()
        .map(|c| c.as_os_str().to_os_string())
        .collect();
    if Path::new(rel).is_absolute() {
        return Err(escape("absolute path"));
    }
    let mut stack: Vec<std::ffi::OsString> = Vec::new();
    let mut expansions = 0usize;
    while let Some(comp) = pending.pop_front() {
        match Path::new(&comp).components().next() {
            None | Some(Component::CurDir) => continue,
            Some(Component::RootDir) | Some(Component::Prefix(_)) => {
                return Err(escape("absolute component"));
            }
            Some(Component::ParentDir) => {
                if stack.pop().is_none() {
                    return Err(escape("'..' above the jail root"));
                }
            }
            Some(Component::Normal(_)) => {
                let candidate: PathBuf = root.join(stack.iter().collect::<PathBuf>()).join(&comp);
                match std::fs::symlink_metadata(&candidate) {
                    Ok(meta) if meta.file_type().is_symlink() => {
                        expansions += 1;
                        if expansions > MAX_SYMLINK_EXPANSIONS {
                            return Err(escape("too many symlink expansions"));
                        }
                        let target = std::fs::read_link(&candidate)
                            .map_err(|e| Fault::internal(format!("readlink: {e}")))?;
                        if target.is_absolute() {
                            return Err(escape("absolute symlink target"));
                        }
                        for c in target.components().rev() {
                            pending.push_front(c.as_os_str().to_os_string());
                        }
                    }
                    _ => stack.push(comp),
                }
            }
        }
    }
    Ok(root.join(stack.iter().collect::<PathBuf>()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub is_dir: bool,
    pub size_b: u64,
    pub mtime_s: f64,
}

fn entry_to_value(e: &FileEntry) -> RpcValue {
    structure([
        ("name", RpcValue::string(&e.name)),
        ("is_dir", RpcValue::Bool(e.is_dir)),
        ("size_B", RpcValue::Double(e.size_b as f64)),
        ("mtime", RpcValue::Double(e.mtime_s)),
    ])
}

fn mtime_s(meta: &std::fs::Metadata) -> f64 {
    meta.modified()
        .ok()
        .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Which tree a jailed path resolves into.
enum Target {
    /// A real path in the user's jail.
    Jail(PathBuf),
    /// Read-only view into a job sandbox.
    Sandbox(PathBuf),
    /// The synthetic `jobs/` directory itself.
    JobsRoot,
}

pub struct FileService {
    file_root: PathBuf,
    jobs: Arc<JobTable>,
    acl: Arc<AclStore>,
}

impl FileService {
    pub fn new(file_root: PathBuf, jobs: Arc<JobTable>, acl: Arc<AclStore>) -> Self {
        FileService {
            file_root,
            jobs,
            acl,
        }
    }

    fn jail_root(&self, ctx: &CallContext) -> Result<PathBuf, Fault> {
        let user = ctx.principal.local_user.as_deref().ok_or_else(|| {
            Fault::auth_failed("caller has no grid-mapfile mapping to a local user")
        })?;
        let root = self.file_root.join(user);
        std::fs::create_dir_all(&root)
            .map_err(|e| Fault::internal(format!("cannot create jail root: {e}")))?;
        Ok(root)
    }

    fn resolve(&self, ctx: &CallContext, raw: &str) -> Result<Target, Fault> {
        let trimmed = raw.trim_start_matches("./");
        if trimmed == "jobs" {
            return Ok(Target::JobsRoot);
        }
        if let Some(rest) = trimmed.strip_prefix("jobs/") {
            let (id, inner) = match rest.split_once('/') {
                Some((id, inner)) => (id, inner),
                None => (rest, ""),
            };
            let job = self
                .jobs
                .get(id)
                .ok_or_else(|| Fault::not_found(format!("no job {id:?}")))?;
            let owner_or_admin = job.owner_dn == ctx.principal.dn
                || self.acl.check(&ctx.principal, "shell.admin");
            if !owner_or_admin {
                return Err(Fault::access_denied("not the owner of this job"));
            }
            return Ok(Target::Sandbox(jail_resolve(&job.sandbox, inner)?));
        }
        let root = self.jail_root(ctx)?;
        Ok(Target::Jail(jail_resolve(&root, trimmed)?))
    }

    fn ls(&self, ctx: &CallContext, raw: &str) -> Result<RpcValue, Fault> {
        let target = self.resolve(ctx, raw)?;
        let mut entries: Vec<FileEntry> = match &target {
            Target::JobsRoot => self
                .jobs
                .owned_by(&ctx.principal.dn)
                .into_iter()
                .map(|id| FileEntry {
                    name: id,
                    is_dir: true,
                    size_b: 0,
                    mtime_s: 0.0,
                })
                .collect(),
            Target::Jail(path) | Target::Sandbox(path) => {
                let meta = std::fs::metadata(path)
                    .map_err(|_| Fault::not_found(format!("no such path: {raw:?}")))?;
                if !meta.is_dir() {
                    return Err(Fault::not_found(format!("not a directory: {raw:?}")));
                }
                let mut items = Vec::new();
                let dir = std::fs::read_dir(path)
                    .map_err(|e| Fault::internal(format!("read_dir: {e}")))?;
                for entry in dir {
                    let entry = entry.map_err(|e| Fault::internal(format!("read_dir: {e}")))?;
                    let meta = entry
                        .metadata()
                        .map_err(|e| Fault::internal(format!("stat: {e}")))?;
                    items.push(FileEntry {
                        name: entry.file_name().to_string_lossy().into_owned(),
                        is_dir: meta.is_dir(),
                        size_b: if meta.is_dir() { 0 } else { meta.len() },
                        mtime_s: mtime_s(&meta),
                    });
                }
                items
            }
        };
        // The jobs mount appears in the jail root listing.
        let is_jail_root = matches!(target, Target::Jail(_))
            && (raw.is_empty() || raw == "." || raw == "./");
        if is_jail_root {
            entries.push(FileEntry {
                name: "jobs".into(),
                is_dir: true,
                size_b: 0,
                mtime_s: 0.0,
            });
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(RpcValue::Array(entries.iter().map(entry_to_value).collect()))
    }

    fn get(&self, ctx: &CallContext, raw: &str, offset: u64, length: u64) -> Result<RpcValue, Fault> {
        if length > MAX_GET_LEN {
            return Err(Fault::bad_params(format!(
                "length must be <= {MAX_GET_LEN} bytes per call"
            )));
        }
        let path = match self.resolve(ctx, raw)? {
            Target::Jail(p) | Target::Sandbox(p) => p,
            Target::JobsRoot => return Err(Fault::not_found("jobs is a directory")),
        };
        let meta = std::fs::metadata(&path)
            .map_err(|_| Fault::not_found(format!("no such path: {raw:?}")))?;
        if !meta.is_file() {
            return Err(Fault::not_found(format!("not a regular file: {raw:?}")));
        }
        let mut file = std::fs::File::open(&path)
            .map_err(|e| Fault::internal(format!("open: {e}")))?;
        file.seek(SeekFrom::Start(offset))
            .map_err(|e| Fault::internal(format!("seek: {e}")))?;
        let mut buf = Vec::with_capacity(length.min(64 * 1024) as usize);
        file.take(length)
            .read_to_end(&mut buf)
            .map_err(|e| Fault::internal(format!("read: {e}")))?;
        Ok(RpcValue::Base64(buf))
    }

    fn put(
        &self,
        ctx: &CallContext,
        raw: &str,
        bytes: &[u8],
        append: bool,
    ) -> Result<RpcValue, Fault> {
        let path = match self.resolve(ctx, raw)? {
            Target::Jail(p) => p,
            // Sandboxes are read-only through the file surface.
            Target::Sandbox(_) | Target::JobsRoot => {
                return Err(Fault::access_denied("job sandboxes are read-only"))
            }
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Fault::internal(format!("mkdir: {e}")))?;
        }
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Fault::internal(format!("open for write: {e}")))?;
        file.write_all(bytes)
            .map_err(|e| Fault::internal(format!("write: {e}")))?;
        Ok(RpcValue::Int(bytes.len() as i32))
    }
}

fn need_offset(params: &[RpcValue], idx: usize) -> Result<u64, Fault> {
    let n = need(params, idx)?
        .as_f64()
        .ok_or_else(|| Fault::bad_params(format!("parameter {idx} must be a number")))?;
    if !(0.0..=9.0e15).contains(&n) {
        return Err(Fault::bad_params(format!("parameter {idx} out of range")));
    }
    Ok(n as u64)
}

#[async_trait]
impl ServicePlugin for FileService {
    fn service(&self) -> &'static str {
        "file"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["ls", "get", "put"]
    }

    async fn call(
        &self,
        ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "ls" => self.ls(ctx, need_str(params, 0)?),
            "get" => {
                let path = need_str(params, 0)?;
                let offset = need_offset(params, 1)?;
                let length = need_offset(params, 2)?;
                self.get(ctx, path, offset, length)
            }
            "put" => {
                let path = need_str(params, 0)?;
                let bytes = need_bytes(params, 1)?;
                let append = need_bool(params, 2)?;
                self.put(ctx, path, bytes, append)
            }
            other => Err(Fault::no_such_method(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(root: &Path) {
        std::fs::create_dir_all(root).unwrap();
    }

    #[test]
    fn resolve_stays_inside() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("jail");
        setup(&root);
        assert_eq!(jail_resolve(&root, "a/b.txt").unwrap(), root.join("a/b.txt"));
        assert_eq!(jail_resolve(&root, "a/../b").unwrap(), root.join("b"));
        assert_eq!(jail_resolve(&root, "./x/./y").unwrap(), root.join("x/y"));
        assert_eq!(jail_resolve(&root, "").unwrap(), root);
    }

    #[test]
    fn escapes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("jail");
        setup(&root);
        for hostile in [
            "../x",
            "../../etc/passwd",
            "a/../../x",
            "a/b/../../../x",
            "/etc/passwd",
            "..",
        ] {
            let err = jail_resolve(&root, hostile).unwrap_err();
            assert_eq!(err.code, crate::fault::ACCESS_DENIED, "{hostile}");
        }
    }

    #[cfg(unix)]
    #[test]
    fn symlink_escapes_rejected() {
        use std::os::unix::fs::symlink;
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("jail");
        setup(&root);
        std::fs::write(dir.path().join("secret.txt"), "outside").unwrap();
        symlink("/etc", root.join("abs_link")).unwrap();
        symlink("../secret.txt", root.join("rel_link")).unwrap();
        symlink("loop2", root.join("loop1")).unwrap();
        symlink("loop1", root.join("loop2")).unwrap();
        std::fs::create_dir(root.join("sub")).unwrap();
        symlink("../../secret.txt", root.join("sub/deep_link")).unwrap();

        for hostile in ["abs_link/passwd", "rel_link", "loop1", "sub/deep_link"] {
            let err = jail_resolve(&root, hostile).unwrap_err();
            assert_eq!(err.code, crate::fault::ACCESS_DENIED, "{hostile}");
        }
    }

    #[cfg(unix)]
    #[test]
    fn internal_symlinks_allowed() {
        use std::os::unix::fs::symlink;
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("jail");
        setup(&root);
        std::fs::create_dir(root.join("data")).unwrap();
        std::fs::write(root.join("data/real.txt"), "ok").unwrap();
        symlink("data/real.txt", root.join("alias.txt")).unwrap();
        let resolved = jail_resolve(&root, "alias.txt").unwrap();
        assert_eq!(resolved, root.join("data/real.txt"));
        // Resolved paths always live under the root.
        assert!(resolved.starts_with(&root));
    }

    #[test]
    fn backslash_and_encoded_separators_are_literal_names() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("jail");
        setup(&root);
        // Within a POSIX jail these are ordinary file name bytes, so they
        // must stay inside the root rather than act as separators.
        for odd in ["..\\..\\etc", "a%2F..%2F..", "%2e%2e/x"] {
            let resolved = jail_resolve(&root, odd).unwrap();
            assert!(resolved.starts_with(&root), "{odd} -> {resolved:?}");
        }
    }
}
