//! Server configuration: a flat `key=value` properties file.
//!
//! One file configures the whole server, including which services are bound
//! and by which implementation. Unknown keys are rejected so typos fail at
//! startup rather than silently disabling a service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::auth::AuthMode;
use crate::shell::ExecutorMode;

/// Built-in service implementations, keyed by service name. Binding a
/// service to an id outside this table is a configuration error.
pub const KNOWN_SERVICE_IMPLS: &[(&str, &[&str])] = &[
    ("echo", &["builtin"]),
    ("discovery", &["builtin"]),
    ("metrics", &["builtin"]),
    ("dls", &["builtin"]),
    ("catalog", &["builtin"]),
    ("shell", &["builtin"]),
    ("file", &["builtin"]),
    ("df", &["builtin"]),
];

pub fn impl_exists(service: &str, impl_id: &str) -> bool {
    KNOWN_SERVICE_IMPLS
        .iter()
        .any(|(name, impls)| *name == service && impls.contains(&impl_id))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config error at line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("config error: {0}")]
    General(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

impl ConfigError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError::Line {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub http_port: u16,
    /// UDP port for peer publication; absent disables the UDP transport.
    pub udp_port: Option<u16>,
    /// Peer servers (`host:port` UDP endpoints) that receive registry
    /// publications.
    pub peers: Vec<String>,
    pub purge_interval_ms: u64,
    pub publish_interval_ms: u64,
    pub auth_mode: AuthMode,
    pub hmac_secret: Option<String>,
    pub gridmap_path: Option<PathBuf>,
    pub sandbox_root: Option<PathBuf>,
    pub file_root: Option<PathBuf>,
    pub journal_path: Option<PathBuf>,
    pub w_time: f64,
    pub w_rel: f64,
    /// Enabled optional services: name -> implementation id.
    pub services: BTreeMap<String, String>,
    pub executor: ExecutorMode,
    pub privileged_denylist: Vec<String>,
    /// Host name peers should use to reach this server's RPC endpoint.
    pub advertise_host: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            http_port: 0,
            udp_port: None,
            peers: Vec::new(),
            purge_interval_ms: 500,
            publish_interval_ms: 1000,
            auth_mode: AuthMode::InsecureHeader,
            hmac_secret: None,
            gridmap_path: None,
            sandbox_root: None,
            file_root: None,
            journal_path: None,
            w_time: 1.0,
            w_rel: 1.0,
            services: BTreeMap::new(),
            executor: ExecutorMode::SameUser,
            privileged_denylist: Vec::new(),
            advertise_host: "127.0.0.1".to_string(),
        }
    }
}

impl ServerConfig {
    pub fn enabled(&self, service: &str) -> bool {
        self.services.contains_key(service)
    }
}

pub fn load_config(path: &Path) -> Result<ServerConfig, ConfigError> {
    let content =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{path:?}: {e}")))?;
    parse_config(&content)
}

pub fn parse_config(content: &str) -> Result<ServerConfig, ConfigError> {
    let mut cfg = ServerConfig::default();
    let mut saw_http_port = false;
    for (idx, raw) in content.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(lineno, format!("expected key=value, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "http.port" => {
                cfg.http_port = parse_num(lineno, key, value)?;
                saw_http_port = true;
            }
            "udp.port" => cfg.udp_port = Some(parse_num(lineno, key, value)?),
            "registry.peers" => {
                cfg.peers = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|peer| {
                        check_host_port(peer)
                            .then(|| peer.to_string())
                            .ok_or_else(|| {
                                ConfigError::at(lineno, format!("bad peer address: {peer:?}"))
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "registry.purge_interval_ms" => {
                cfg.purge_interval_ms = parse_num(lineno, key, value)?;
                if cfg.purge_interval_ms == 0 {
                    return Err(ConfigError::at(lineno, "purge interval must be > 0"));
                }
            }
            "registry.publish_interval_ms" => {
                cfg.publish_interval_ms = parse_num(lineno, key, value)?;
                if cfg.publish_interval_ms == 0 {
                    return Err(ConfigError::at(lineno, "publish interval must be > 0"));
                }
            }
            "auth.mode" => {
                cfg.auth_mode = match value {
                    "insecure-header" => AuthMode::InsecureHeader,
                    "hmac-token" => AuthMode::HmacToken,
                    other => {
                        return Err(ConfigError::at(lineno, format!("unknown auth mode: {other:?}")))
                    }
                };
            }
            "auth.hmac_secret" => cfg.hmac_secret = Some(value.to_string()),
            "advertise.host" => cfg.advertise_host = value.to_string(),
            "gridmap.path" => cfg.gridmap_path = Some(PathBuf::from(value)),
            "sandbox.root" => cfg.sandbox_root = Some(PathBuf::from(value)),
            "file.root" => cfg.file_root = Some(PathBuf::from(value)),
            "journal.path" => cfg.journal_path = Some(PathBuf::from(value)),
            "dls.w_time" => cfg.w_time = parse_num(lineno, key, value)?,
            "dls.w_rel" => cfg.w_rel = parse_num(lineno, key, value)?,
            "shell.executor" => {
                cfg.executor = match value {
                    "same-user" => ExecutorMode::SameUser,
                    "setuid-helper" => ExecutorMode::SetuidHelper(PathBuf::new()),
                    other => {
                        return Err(ConfigError::at(lineno, format!("unknown executor: {other:?}")))
                    }
                };
            }
            "shell.helper" => {
                cfg.executor = ExecutorMode::SetuidHelper(PathBuf::from(value));
            }
            "shell.denylist" => {
                cfg.privileged_denylist = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
            }
            _ => {
                if let Some(service) = key.strip_prefix("service.") {
                    if service.is_empty() {
                        return Err(ConfigError::at(lineno, "empty service name"));
                    }
                    if !impl_exists(service, value) {
                        return Err(ConfigError::at(
                            lineno,
                            format!("service {service:?} has no implementation {value:?}"),
                        ));
                    }
                    cfg.services.insert(service.to_string(), value.to_string());
                } else {
                    return Err(ConfigError::at(lineno, format!("unknown key: {key:?}")));
                }
            }
        }
    }

    if !saw_http_port {
        return Err(ConfigError::General("http.port is mandatory".into()));
    }
    if cfg.auth_mode == AuthMode::HmacToken && cfg.hmac_secret.is_none() {
        return Err(ConfigError::General(
            "auth.mode=hmac-token requires auth.hmac_secret".into(),
        ));
    }
    if let ExecutorMode::SetuidHelper(path) = &cfg.executor {
        if path.as_os_str().is_empty() {
            return Err(ConfigError::General(
                "shell.executor=setuid-helper requires shell.helper".into(),
            ));
        }
    }
    if cfg.enabled("shell") {
        if cfg.gridmap_path.is_none() {
            return Err(ConfigError::General("shell requires gridmap.path".into()));
        }
        if cfg.sandbox_root.is_none() {
            return Err(ConfigError::General("shell requires sandbox.root".into()));
        }
    }
    if cfg.enabled("file") {
        if cfg.gridmap_path.is_none() {
            return Err(ConfigError::General("file requires gridmap.path".into()));
        }
        if cfg.file_root.is_none() {
            return Err(ConfigError::General("file requires file.root".into()));
        }
    }
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::at(line, format!("bad value for {key}: {value:?}")))
}

fn check_host_port(s: &str) -> bool {
    match s.rsplit_once(':') {
        Some((host, port)) => !host.is_empty() && port.parse::<u16>().is_ok(),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = parse_config("http.port=8080\nservice.echo=builtin\n").unwrap();
        assert_eq!(cfg.http_port, 8080);
        assert!(cfg.enabled("echo"));
        assert_eq!(cfg.purge_interval_ms, 500);
        assert_eq!(cfg.publish_interval_ms, 1000);
        assert_eq!(cfg.w_time, 1.0);
        assert_eq!(cfg.w_rel, 1.0);
    }

    #[test]
    fn unresolvable_service_rejected() {
        let err = parse_config("http.port=1\nservice.dls=nosuchimpl\n").unwrap_err();
        assert!(matches!(err, ConfigError::Line { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_rejected() {
        let err = parse_config("").unwrap_err();
        assert!(err.to_string().contains("http.port"));
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("http.port=1\nbogus.key=x\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::at(2, "unknown key: \"bogus.key\"".to_string())
        );
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let cfg = parse_config("# a comment\n\nhttp.port=9999\n").unwrap();
        assert_eq!(cfg.http_port, 9999);
    }

    #[test]
    fn peers_parsed_and_validated() {
        let cfg = parse_config("http.port=1\nregistry.peers=a:1000, b:2000\n").unwrap();
        assert_eq!(cfg.peers, vec!["a:1000", "b:2000"]);
        assert!(parse_config("http.port=1\nregistry.peers=nocolon\n").is_err());
    }

    #[test]
    fn hmac_mode_requires_secret() {
        assert!(parse_config("http.port=1\nauth.mode=hmac-token\n").is_err());
        let cfg =
            parse_config("http.port=1\nauth.mode=hmac-token\nauth.hmac_secret=s3cret\n").unwrap();
        assert_eq!(cfg.auth_mode, AuthMode::HmacToken);
    }

    #[test]
    fn shell_requires_paths() {
        let err = parse_config("http.port=1\nservice.shell=builtin\n").unwrap_err();
        assert!(err.to_string().contains("gridmap.path"));
        let cfg = parse_config(
            "http.port=1\nservice.shell=builtin\ngridmap.path=/g\nsandbox.root=/s\n",
        )
        .unwrap();
        assert!(cfg.enabled("shell"));
    }

    #[test]
    fn zero_intervals_rejected() {
        assert!(parse_config("http.port=1\nregistry.purge_interval_ms=0\n").is_err());
        assert!(parse_config("http.port=1\nregistry.publish_interval_ms=0\n").is_err());
    }
}
