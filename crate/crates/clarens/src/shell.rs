//! Shell service: asynchronous command execution under mapped local
//! identities, one sandbox directory per job, with suexec-style safeguards.
//!
//! `cmd` returns a fresh job id as soon as the command is scheduled; the
//! process runs detached with stdout/stderr captured into the sandbox, so
//! clients can launch long-running commands without holding a connection
//! open. `cmd_info` reports the job snapshot, `cmd_kill` terminates it.
//!
//! Execution identity is pluggable: `same-user` records the mapped account
//! but runs as the server's own account (no privileges needed), while
//! `setuid-helper` prefixes an external privileged helper that switches to
//! the mapped user. The privileged-account refusal (root, uid 0, denylist)
//! is enforced before either executor runs anything.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::acl::AclStore;
use crate::clock::Clock;
use crate::fault::Fault;
use crate::journal::{Journal, JournalEvent};
use crate::plugin::{need_str, structure, CallContext, ServicePlugin};
use crate::value::RpcValue;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutorMode {
    /// Process runs as the server's account; the mapped user is recorded
    /// but not switched. The desk-scale default.
    SameUser,
    /// An external privileged helper switches to the mapped user:
    /// `<helper> <user> <command> <argv...>`.
    SetuidHelper(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    #[serde(rename = "QUEUED")]
    Queued,
    #[serde(rename = "RUNNING")]
    Running,
    #[serde(rename = "FINISHED")]
    Finished,
    #[serde(rename = "FAILED")]
    Failed,
    #[serde(rename = "KILLED")]
    Killed,
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Finished | JobState::Failed | JobState::Killed)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            JobState::Queued => "QUEUED",
            JobState::Running => "RUNNING",
            JobState::Finished => "FINISHED",
            JobState::Failed => "FAILED",
            JobState::Killed => "KILLED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandJob {
    pub id: String,
    pub command: String,
    pub argv: Vec<String>,
    pub local_user: String,
    /// DN of the submitting principal; job visibility is owner-or-admin.
    pub owner_dn: String,
    pub pid: Option<u32>,
    pub state: JobState,
    pub exit_code: Option<i32>,
    pub started_at: Option<f64>,
    pub ended_at: Option<f64>,
    pub sandbox: PathBuf,
}

/// Refuses privileged accounts: `root` by name, uid 0 by passwd lookup, and
/// anything on the configured denylist.
pub fn check_local_user(user: &str, denylist: &[String], passwd_path: &Path) -> Result<(), Fault> {
    if user == "root" {
        return Err(Fault::auth_failed("refusing to run commands as root"));
    }
    if denylist.iter().any(|d| d == user) {
        return Err(Fault::auth_failed(format!(
            "user {user:?} is on the privileged-user denylist"
        )));
    }
    if lookup_uid(user, passwd_path) == Some(0) {
        return Err(Fault::auth_failed(format!(
            "user {user:?} resolves to uid 0"
        )));
    }
    Ok(())
}

fn lookup_uid(user: &str, passwd_path: &Path) -> Option<u32> {
    let content = std::fs::read_to_string(passwd_path).ok()?;
    for line in content.lines() {
        let mut fields = line.split(':');
        if fields.next() == Some(user) {
            let _password = fields.next();
            return fields.next()?.parse().ok();
        }
    }
    None
}

/// Shells that would reintroduce string interpolation; invoking one needs
/// the separate `shell.raw` grant.
const SHELL_INTERPRETERS: &[&str] = &["sh", "bash", "dash", "zsh", "ksh", "csh"];

pub fn is_shell_interpreter(command: &str) -> bool {
    let base = command.rsplit('/').next().unwrap_or(command);
    SHELL_INTERPRETERS.contains(&base)
}

struct JobEntry {
    job: CommandJob,
    kill_tx: Option<tokio::sync::oneshot::Sender<()>>,
}

pub struct JobTable {
    jobs: RwLock<BTreeMap<String, JobEntry>>,
    sandbox_root: PathBuf,
    executor: ExecutorMode,
    denylist: Vec<String>,
    passwd_path: PathBuf,
    journal: Arc<Journal>,
    clock: Clock,
}

pub fn new_job_id() -> String {
    let mut bytes = [0u8; 8];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl JobTable {
    pub fn new(
        sandbox_root: PathBuf,
        executor: ExecutorMode,
        denylist: Vec<String>,
        journal: Arc<Journal>,
        clock: Clock,
    ) -> Self {
        JobTable {
            jobs: RwLock::new(BTreeMap::new()),
            sandbox_root,
            executor,
            denylist,
            passwd_path: PathBuf::from("/etc/passwd"),
            journal,
            clock,
        }
    }

    pub fn with_passwd_path(mut self, path: PathBuf) -> Self {
        self.passwd_path = path;
        self
    }

    fn now_s(&self) -> f64 {
        (self.clock)() as f64 / 1000.0
    }

    fn fresh_id(&self) -> String {
        let jobs = self.jobs.read();
        loop {
            let id = new_job_id();
            if !jobs.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<CommandJob> {
        self.jobs.read().get(id).map(|e| e.job.clone())
    }

    fn update<F: FnOnce(&mut CommandJob)>(&self, id: &str, f: F) {
        let mut jobs = self.jobs.write();
        if let Some(entry) = jobs.get_mut(id) {
            f(&mut entry.job);
            self.journal.append(&JournalEvent::Job {
                job: entry.job.clone(),
            });
        }
    }

    /// Validates the safeguard, creates the sandbox, schedules the command
    /// and returns its id without waiting for the process.
    pub fn submit(
        self: &Arc<Self>,
        command: &str,
        argv: &[String],
        local_user: &str,
        owner_dn: &str,
    ) -> Result<String, Fault> {
        if command.is_empty() {
            return Err(Fault::bad_params("command must be non-empty"));
        }
        check_local_user(local_user, &self.denylist, &self.passwd_path)?;

        let id = self.fresh_id();
        let sandbox = self.sandbox_root.join(&id);
        std::fs::create_dir_all(&sandbox)
            .map_err(|e| Fault::internal(format!("sandbox creation failed: {e}")))?;
        let stdout = std::fs::File::create(sandbox.join("stdout"))
            .map_err(|e| Fault::internal(format!("sandbox setup failed: {e}")))?;
        let stderr = std::fs::File::create(sandbox.join("stderr"))
            .map_err(|e| Fault::internal(format!("sandbox setup failed: {e}")))?;

        let (kill_tx, kill_rx) = tokio::sync::oneshot::channel();
        let job = CommandJob {
            id: id.clone(),
            command: command.to_string(),
            argv: argv.to_vec(),
            local_user: local_user.to_string(),
            owner_dn: owner_dn.to_string(),
            pid: None,
            state: JobState::Queued,
            exit_code: None,
            started_at: None,
            ended_at: None,
            sandbox: sandbox.clone(),
        };
        self.journal.append(&JournalEvent::Job { job: job.clone() });
        self.jobs.write().insert(
            id.clone(),
            JobEntry {
                job,
                kill_tx: Some(kill_tx),
            },
        );

        let mut cmd = match &self.executor {
            ExecutorMode::SameUser => {
                let mut c = tokio::process::Command::new(command);
                c.args(argv);
                c
            }
            ExecutorMode::SetuidHelper(helper) => {
                let mut c = tokio::process::Command::new(helper);
                c.arg(local_user).arg(command).args(argv);
                c
            }
        };
        cmd.current_dir(&sandbox)
            .stdin(Stdio::null())
            .stdout(Stdio::from(stdout))
            .stderr(Stdio::from(stderr))
            .kill_on_drop(true);

        match cmd.spawn() {
            Ok(mut child) => {
                let pid = child.id();
                let started = self.now_s();
                self.update(&id, |j| {
                    j.pid = pid;
                    j.state = JobState::Running;
                    j.started_at = Some(started);
                });
                let table = Arc::clone(self);
                let job_id = id.clone();
                tokio::spawn(async move {
                    let (status, killed) = tokio::select! {
                        status = child.wait() => (status, false),
                        _ = kill_rx => {
                            let _ = child.start_kill();
                            (child.wait().await, true)
                        }
                    };
                    let ended = table.now_s();
                    table.update(&job_id, |j| {
                        j.ended_at = Some(ended);
                        match (&status, killed) {
                            (_, true) => j.state = JobState::Killed,
                            (Ok(st), false) => match st.code() {
                                Some(0) => {
                                    j.state = JobState::Finished;
                                    j.exit_code = Some(0);
                                }
                                Some(code) => {
                                    j.state = JobState::Failed;
                                    j.exit_code = Some(code);
                                }
                                // Died on a signal we did not send: report
                                // the conventional 128+signal code.
                                None => {
                                    j.state = JobState::Failed;
                                    j.exit_code = Some(signal_exit_code(st));
                                }
                            },
                            (Err(_), false) => {
                                j.state = JobState::Failed;
                                j.exit_code = Some(-1);
                            }
                        }
                    });
                });
            }
            Err(e) => {
                // The id is already issued; the failure is part of the job's
                // observable lifecycle, mirroring an exec failure in a child.
                let _ = std::fs::write(
                    sandbox.join("stderr"),
                    format!("failed to execute {command:?}: {e}\n"),
                );
                let ended = self.now_s();
                self.update(&id, |j| {
                    j.state = JobState::Failed;
                    j.exit_code = Some(127);
                    j.started_at = Some(ended);
                    j.ended_at = Some(ended);
                });
            }
        }
        Ok(id)
    }

    /// Requests termination. True only if this call drove the job to
    /// KILLED; a job that is already terminal (or finished racing the
    /// signal) reports false.
    pub async fn kill(&self, id: &str) -> Result<bool, Fault> {
        let sent = {
            let mut jobs = self.jobs.write();
            let entry = jobs
                .get_mut(id)
                .ok_or_else(|| Fault::not_found(format!("no job {id:?}")))?;
            if entry.job.state.is_terminal() {
                return Ok(false);
            }
            match entry.kill_tx.take() {
                Some(tx) => tx.send(()).is_ok(),
                None => false, // another kill is already in flight
            }
        };
        if !sent {
            return Ok(false);
        }
        // SIGKILL is prompt; wait for the reaper to record the outcome.
        for _ in 0..500 {
            if let Some(job) = self.get(id) {
                if job.state.is_terminal() {
                    return Ok(job.state == JobState::Killed);
                }
            }
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        }
        Err(Fault::internal("job did not reach a terminal state"))
    }

    /// Replays a journaled job snapshot (latest snapshot per id wins).
    pub fn replay(&self, event: &JournalEvent) {
        if let JournalEvent::Job { job } = event {
            self.jobs.write().insert(
                job.id.clone(),
                JobEntry {
                    job: job.clone(),
                    kill_tx: None,
                },
            );
        }
    }

    /// After replay: jobs from a previous process that never reached a
    /// terminal state are orphans; record them as killed.
    pub fn finalize_replay(&self) {
        let now = self.now_s();
        let ids: Vec<String> = self
            .jobs
            .read()
            .values()
            .filter(|e| !e.job.state.is_terminal())
            .map(|e| e.job.id.clone())
            .collect();
        for id in ids {
            self.update(&id, |j| {
                j.state = JobState::Killed;
                j.ended_at = Some(now);
            });
        }
    }

    pub fn job_count(&self) -> usize {
        self.jobs.read().len()
    }

    /// Ids of jobs submitted by the given principal, sorted.
    pub fn owned_by(&self, dn: &str) -> Vec<String> {
        self.jobs
            .read()
            .values()
            .filter(|e| e.job.owner_dn == dn)
            .map(|e| e.job.id.clone())
            .collect()
    }
}

#[cfg(unix)]
fn signal_exit_code(status: &std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    128 + status.signal().unwrap_or(0)
}

#[cfg(not(unix))]
fn signal_exit_code(_status: &std::process::ExitStatus) -> i32 {
    -1
}

/// Runs a command to completion capturing its output; the utility layer for
/// services that wrap command-line tools.
pub async fn run_command_capture(
    command: &str,
    args: &[&str],
) -> Result<(i32, String, String), Fault> {
    let output = tokio::process::Command::new(command)
        .args(args)
        .stdin(Stdio::null())
        .output()
        .await
        .map_err(|e| Fault::internal(format!("cannot run {command:?}: {e}")))?;
    Ok((
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    ))
}

// ---- RPC surface ----------------------------------------------------------

pub fn job_to_value(job: &CommandJob) -> RpcValue {
    let mut fields = vec![
        ("id", RpcValue::string(&job.id)),
        ("command", RpcValue::string(&job.command)),
        (
            "argv",
            RpcValue::Array(job.argv.iter().map(|a| RpcValue::string(a.as_str())).collect()),
        ),
        ("local_user", RpcValue::string(&job.local_user)),
        ("state", RpcValue::string(job.state.as_str())),
        (
            "sandbox",
            RpcValue::string(job.sandbox.to_string_lossy().into_owned()),
        ),
    ];
    if let Some(pid) = job.pid {
        fields.push(("pid", RpcValue::Int(pid as i32)));
    }
    if let Some(code) = job.exit_code {
        fields.push(("exit_code", RpcValue::Int(code)));
    }
    if let Some(t) = job.started_at {
        fields.push(("started_at", RpcValue::Double(t)));
    }
    if let Some(t) = job.ended_at {
        fields.push(("ended_at", RpcValue::Double(t)));
    }
    structure(fields)
}

pub struct ShellService {
    jobs: Arc<JobTable>,
    acl: Arc<AclStore>,
}

impl ShellService {
    pub fn new(jobs: Arc<JobTable>, acl: Arc<AclStore>) -> Self {
        ShellService { jobs, acl }
    }

    /// Owner or holder of the `shell.admin` grant.
    fn may_view(&self, ctx: &CallContext, job: &CommandJob) -> bool {
        job.owner_dn == ctx.principal.dn || self.acl.check(&ctx.principal, "shell.admin")
    }
}

#[async_trait]
impl ServicePlugin for ShellService {
    fn service(&self) -> &'static str {
        "shell"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["cmd", "cmd_info", "cmd_kill"]
    }

    async fn call(
        &self,
        ctx: &CallContext,
        method: &str,
        params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        match method {
            "cmd" => {
                let local_user = ctx.principal.local_user.clone().ok_or_else(|| {
                    Fault::auth_failed("caller has no grid-mapfile mapping to a local user")
                })?;
                let command = need_str(params, 0)?;
                let argv: Vec<String> = match params.get(1) {
                    None => Vec::new(),
                    Some(v) => v
                        .as_array()
                        .ok_or_else(|| Fault::bad_params("argv must be an array"))?
                        .iter()
                        .map(|a| {
                            a.as_str()
                                .map(str::to_string)
                                .ok_or_else(|| Fault::bad_params("argv must contain strings"))
                        })
                        .collect::<Result<_, _>>()?,
                };
                if is_shell_interpreter(command)
                    && !self.acl.check(&ctx.principal, "shell.raw")
                {
                    return Err(Fault::access_denied(
                        "invoking a shell interpreter requires the shell.raw grant",
                    ));
                }
                let id = self
                    .jobs
                    .submit(command, &argv, &local_user, &ctx.principal.dn)?;
                Ok(RpcValue::Str(id))
            }
            "cmd_info" => {
                let id = need_str(params, 0)?;
                let job = self
                    .jobs
                    .get(id)
                    .ok_or_else(|| Fault::not_found(format!("no job {id:?}")))?;
                if !self.may_view(ctx, &job) {
                    return Err(Fault::access_denied("not the owner of this job"));
                }
                Ok(job_to_value(&job))
            }
            "cmd_kill" => {
                let id = need_str(params, 0)?;
                let job = self
                    .jobs
                    .get(id)
                    .ok_or_else(|| Fault::not_found(format!("no job {id:?}")))?;
                if !self.may_view(ctx, &job) {
                    return Err(Fault::access_denied("not the owner of this job"));
                }
                Ok(RpcValue::Bool(self.jobs.kill(id).await?))
            }
            other => Err(Fault::no_such_method(other)),
        }
    }
}

/// Disk-usage service built on the command-wrapping utility layer.
pub struct DfService;

#[async_trait]
impl ServicePlugin for DfService {
    fn service(&self) -> &'static str {
        "df"
    }

    fn methods(&self) -> Vec<&'static str> {
        vec!["df"]
    }

    async fn call(
        &self,
        _ctx: &CallContext,
        method: &str,
        _params: &[RpcValue],
    ) -> Result<RpcValue, Fault> {
        if method != "df" {
            return Err(Fault::no_such_method(method));
        }
        let (code, stdout, stderr) = run_command_capture("df", &["-P", "-k"]).await?;
        if code != 0 {
            return Err(Fault::internal(format!("df exited {code}: {stderr}")));
        }
        parse_df_output(&stdout)
            .ok_or_else(|| Fault::internal("cannot parse df output"))
    }
}

/// Parses `df -P -k` output into `{mount: {total_B, free_B}}`.
fn parse_df_output(stdout: &str) -> Option<RpcValue> {
    let mut mounts = BTreeMap::new();
    for line in stdout.lines().skip(1) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 6 {
            continue;
        }
        let total_kib: f64 = fields[1].parse().ok()?;
        let free_kib: f64 = fields[3].parse().ok()?;
        let mount = fields[5..].join(" ");
        mounts.insert(
            mount,
            structure([
                ("total_B", RpcValue::Double(total_kib * 1024.0)),
                ("free_B", RpcValue::Double(free_kib * 1024.0)),
            ]),
        );
    }
    if mounts.is_empty() {
        return None;
    }
    Some(RpcValue::Struct(mounts))
}
