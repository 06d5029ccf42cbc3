//! Server assembly: one HTTP endpoint hosting the bound service plugins,
//! plus the registry's UDP listener, publication and purge timers.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{ConnectInfo, DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use tokio::net::{TcpSocket, UdpSocket};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::acl::AclStore;
use crate::auth::authenticate;
use crate::catalog::{CatalogEntry, CatalogService, CatalogStore};
use crate::client::{ClientAuth, RpcClient};
use crate::clock::{system_clock, Clock};
use crate::config::{ConfigError, ServerConfig};
use crate::dls::{CatalogSource, DlsService, StatsStore};
use crate::fault::Fault;
use crate::files::FileService;
use crate::gridmap::{load_gridmap, GridMap};
use crate::journal::Journal;
use crate::metrics::{MetricsService, MetricsStore};
use crate::plugin::{Dispatcher, EchoService, ServicePlugin};
use crate::registry::{encode_datagram, DiscoveryService, Origin, Registry, ServiceRecord};
use crate::rpc::{encode_response, parse_call, sniff_encoding, RpcResponse};
use crate::shell::{DfService, JobTable, ShellService};
use crate::system::{GroupService, SystemService};
use crate::value::RpcValue;

/// TTL for a server's own service registrations; renewed at half-life.
pub const SELF_REGISTRATION_TTL_S: u32 = 10;
/// Fan-out timeout per catalog query.
pub const CATALOG_QUERY_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("startup io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a request handler or test harness may need to reach.
pub struct ServerState {
    pub config: ServerConfig,
    pub gridmap: Arc<GridMap>,
    pub acl: Arc<AclStore>,
    pub registry: Arc<Registry>,
    pub metrics: Arc<MetricsStore>,
    pub catalog: Arc<CatalogStore>,
    pub stats: Arc<StatsStore>,
    pub jobs: Arc<JobTable>,
    pub dispatcher: Arc<Dispatcher>,
    pub clock: Clock,
}

pub struct ServerHandle {
    pub base_url: String,
    pub http_addr: SocketAddr,
    pub udp_addr: Option<SocketAddr>,
    state: Arc<ServerState>,
    shutdown_tx: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn state(&self) -> &Arc<ServerState> {
        &self.state
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown_tx.send(true);
        for task in self.tasks {
            let _ = tokio::time::timeout(Duration::from_secs(3), task).await;
        }
    }
}

/// Resolves logical files through the local registry and remote catalogs.
struct DiscoveryCatalogSource {
    registry: Arc<Registry>,
    clock: Clock,
    client: RpcClient,
}

#[async_trait]
impl CatalogSource for DiscoveryCatalogSource {
    async fn catalog_hosts(&self) -> Vec<String> {
        self.registry
            .find_server("catalog*", &BTreeMap::new(), (self.clock)())
    }

    async fn lookup(&self, host_url: &str, lfn: &str) -> Result<Vec<CatalogEntry>, Fault> {
        let value = self
            .client
            .call_url(host_url, "catalog.lookup", &[RpcValue::string(lfn)])
            .await
            .map_err(|e| Fault::internal(e.to_string()))?;
        let items = value
            .as_array()
            .ok_or_else(|| Fault::internal("catalog.lookup returned a non-array"))?;
        items
            .iter()
            .map(|item| {
                let m = item
                    .as_struct()
                    .ok_or_else(|| Fault::internal("catalog entry is not a struct"))?;
                Ok(CatalogEntry {
                    lfn: m
                        .get("lfn")
                        .and_then(RpcValue::as_str)
                        .unwrap_or(lfn)
                        .to_string(),
                    pfn: m
                        .get("pfn")
                        .and_then(RpcValue::as_str)
                        .ok_or_else(|| Fault::internal("catalog entry missing pfn"))?
                        .to_string(),
                    size_b: m.get("size_B").and_then(RpcValue::as_f64).unwrap_or(0.0) as u64,
                })
            })
            .collect()
    }
}

async fn gateway(
    State(state): State<Arc<ServerState>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    let encoding = match sniff_encoding(&body, content_type) {
        Ok(e) => e,
        Err(_) => {
            return (
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "unrecognized request encoding\n",
            )
                .into_response();
        }
    };
    let respond = |resp: &RpcResponse| -> Response {
        (
            StatusCode::OK,
            [(header::CONTENT_TYPE, encoding.content_type())],
            encode_response(resp, encoding),
        )
            .into_response()
    };
    let mut call = match parse_call(&body, encoding) {
        Ok(c) => c,
        Err(f) => return respond(&RpcResponse::fault(f, None)),
    };
    let now_s = ((state.clock)() / 1000) as i64;
    let principal = match authenticate(
        |name| headers.get(name).and_then(|v| v.to_str().ok()),
        state.config.auth_mode,
        state.config.hmac_secret.as_deref(),
        &state.gridmap,
        now_s,
    ) {
        Ok(p) => p,
        Err(f) => return respond(&RpcResponse::fault(f, call.call_id.clone())),
    };
    call.principal = Some(principal);
    let resp = state.dispatcher.dispatch(&call, Some(peer.ip())).await;
    respond(&resp)
}

pub async fn start(config: ServerConfig) -> Result<ServerHandle, StartError> {
    let clock = system_clock();

    let (journal, events) = match &config.journal_path {
        Some(path) => Journal::open(path)?,
        None => (Journal::disabled(), Vec::new()),
    };
    let journal = Arc::new(journal);

    let acl = Arc::new(AclStore::new(Arc::clone(&journal)));
    let stats = Arc::new(StatsStore::new(Arc::clone(&journal)));
    let jobs = Arc::new(JobTable::new(
        config.sandbox_root.clone().unwrap_or_default(),
        config.executor.clone(),
        config.privileged_denylist.clone(),
        Arc::clone(&journal),
        clock.clone(),
    ));
    for event in &events {
        acl.replay(event);
        stats.replay(event);
        jobs.replay(event);
    }
    jobs.finalize_replay();

    let gridmap = Arc::new(match &config.gridmap_path {
        Some(path) => load_gridmap(path)?,
        None => GridMap::new(),
    });
    let registry = Arc::new(Registry::new());
    let metrics = Arc::new(MetricsStore::new());
    let catalog = Arc::new(CatalogStore::new());

    let mut plugins: Vec<Arc<dyn ServicePlugin>> = vec![
        Arc::new(SystemService::new(Arc::clone(&acl))),
        Arc::new(GroupService::new(Arc::clone(&acl))),
    ];
    for (name, _impl_id) in &config.services {
        let plugin: Arc<dyn ServicePlugin> = match name.as_str() {
            "echo" => Arc::new(EchoService),
            "discovery" => Arc::new(DiscoveryService::new(Arc::clone(&registry), clock.clone())),
            "metrics" => Arc::new(MetricsService::new(Arc::clone(&metrics), clock.clone())),
            "catalog" => Arc::new(CatalogService::new(Arc::clone(&catalog))),
            "dls" => {
                let source = Arc::new(DiscoveryCatalogSource {
                    registry: Arc::clone(&registry),
                    clock: clock.clone(),
                    client: RpcClient::with_timeout(
                        "",
                        crate::rpc::Encoding::JsonRpc,
                        ClientAuth::None,
                        CATALOG_QUERY_TIMEOUT,
                    ),
                });
                Arc::new(DlsService::new(
                    source,
                    Arc::clone(&metrics),
                    Arc::clone(&stats),
                    config.w_time,
                    config.w_rel,
                ))
            }
            "shell" => Arc::new(ShellService::new(Arc::clone(&jobs), Arc::clone(&acl))),
            "file" => Arc::new(FileService::new(
                config.file_root.clone().unwrap_or_default(),
                Arc::clone(&jobs),
                Arc::clone(&acl),
            )),
            "df" => Arc::new(DfService),
            other => {
                return Err(StartError::Config(ConfigError::General(format!(
                    "service {other:?} has no builtin implementation"
                ))))
            }
        };
        plugins.push(plugin);
    }

    // Everything a publication tick advertises about this node.
    let self_records: Vec<(String, Vec<String>)> = plugins
        .iter()
        .filter(|p| config.services.contains_key(p.service()))
        .map(|p| {
            (
                p.service().to_string(),
                p.methods()
                    .iter()
                    .map(|m| format!("{}.{m}", p.service()))
                    .collect(),
            )
        })
        .collect();

    let dispatcher = Arc::new(Dispatcher::new(plugins, Arc::clone(&acl)));

    let socket = TcpSocket::new_v4()?;
    socket.set_reuseaddr(true)?;
    socket.bind(SocketAddr::from(([0, 0, 0, 0], config.http_port)))?;
    let listener = socket.listen(1024)?;
    let http_addr = listener.local_addr()?;
    let base_url = format!(
        "http://{}:{}/clarens",
        config.advertise_host,
        http_addr.port()
    );

    let udp_socket = match config.udp_port {
        Some(port) => Some(Arc::new(
            UdpSocket::bind(SocketAddr::from(([0, 0, 0, 0], port))).await?,
        )),
        None => None,
    };
    let udp_addr = udp_socket
        .as_ref()
        .map(|s| s.local_addr())
        .transpose()?;

    let state = Arc::new(ServerState {
        config,
        gridmap,
        acl,
        registry,
        metrics,
        catalog,
        stats,
        jobs,
        dispatcher,
        clock,
    });

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let mut tasks = Vec::new();

    let app = Router::new()
        .route("/clarens", post(gateway))
        .layer(DefaultBodyLimit::max(8 * 1024 * 1024))
        .with_state(Arc::clone(&state));
    let mut http_shutdown = shutdown_rx.clone();
    tasks.push(tokio::spawn(async move {
        let serve = axum::serve(
            listener,
            app.into_make_service_with_connect_info::<SocketAddr>(),
        )
        .with_graceful_shutdown(async move {
            let _ = http_shutdown.changed().await;
        });
        if let Err(e) = serve.await {
            tracing::error!("http server error: {e}");
        }
    }));

    if state.config.enabled("discovery") {
        tasks.push(spawn_purge_task(&state, shutdown_rx.clone()));
        tasks.push(spawn_self_registration_task(
            &state,
            self_records,
            base_url.clone(),
            shutdown_rx.clone(),
        ));
        if let Some(socket) = &udp_socket {
            tasks.push(spawn_udp_listener(&state, Arc::clone(socket), shutdown_rx.clone()));
            if !state.config.peers.is_empty() {
                tasks.push(spawn_publish_task(
                    &state,
                    Arc::clone(socket),
                    shutdown_rx.clone(),
                ));
            }
        }
    }

    Ok(ServerHandle {
        base_url,
        http_addr,
        udp_addr,
        state,
        shutdown_tx,
        tasks,
    })
}

fn spawn_purge_task(state: &Arc<ServerState>, mut shutdown: watch::Receiver<bool>) -> JoinHandle<()> {
    let state = Arc::clone(state);
    tokio::spawn(async move {
        let mut tick =
            tokio::time::interval(Duration::from_millis(state.config.purge_interval_ms));
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = shutdown.changed() => break,
                _ = tick.tick() => {
                    let removed = state.registry.purge_expired((state.clock)());
                    if removed > 0 {
                        tracing::debug!("purged {removed} expired registrations");
                    }
                }
            }
        }
    })
}

fn spawn_udp_listener(
    state: &Arc<ServerState>,
    socket: Arc<UdpSocket>,
    mut shutdown: watch::Receiver<bool>,
) -> JoinHandle<()> {
    let state = Arc::clone(state);
    tokio::spawn(async move {
        let mut buf = [0u8; 4096];
        loop {
            tokio::select! {
                _ = shutdown.changed() => break,
                received = socket.recv_from(&mut buf) => {
                    match received {
                        Ok((len, _from)) => {
                            state.registry.handle_datagram(&buf[..len], (state.clock)());
                        }
                        Err(e) => {
                            tracing::warn!("udp receive error: {e}");
                        }
                    }
                }
            }
        }
    })
}

/// Publishes every live, locally registered record to each peer, carrying
/// the remaining (not original) TTL so copies never outlive the original.
fn spawn_publish_task(
    state: &Arc<ServerState>,
    socket: Arc<UdpSocket>,
    mut shutdown: watch::Receiver<bool>,
) -> JoinHandle<()> {
    let state = Arc::clone(state);
    tokio::spawn(async move {
        let mut tick =
            tokio::time::interval(Duration::from_millis(state.config.publish_interval_ms));
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = shutdown.changed() => break,
                _ = tick.tick() => {
                    let now = (state.clock)();
                    for live in state.registry.local_live(now) {
                        let remaining_s = (live.expires_at_ms().saturating_sub(now) / 1000) as u32;
                        if remaining_s == 0 {
                            continue;
                        }
                        let mut record = live.record.clone();
                        record.ttl_s = remaining_s;
                        let datagram = match encode_datagram(&record) {
                            Ok(d) => d,
                            Err(e) => {
                                tracing::warn!("not publishing {}: {e}", record.name);
                                continue;
                            }
                        };
                        for peer in &state.config.peers {
                            match socket.send_to(datagram.as_bytes(), peer.as_str()).await {
                                Ok(_) => {
                                    state
                                        .registry
                                        .stats
                                        .published_datagrams
                                        .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                                }
                                Err(e) => tracing::debug!("publish to {peer} failed: {e}"),
                            }
                        }
                    }
                }
            }
        }
    })
}

/// Keeps this node's own bound services registered in its registry.
fn spawn_self_registration_task(
    state: &Arc<ServerState>,
    services: Vec<(String, Vec<String>)>,
    base_url: String,
    mut shutdown: watch::Receiver<bool>,
) -> JoinHandle<()> {
    let state = Arc::clone(state);
    tokio::spawn(async move {
        let register_all = |state: &ServerState| {
            let now = (state.clock)();
            for (name, methods) in &services {
                let record = ServiceRecord {
                    name: name.clone(),
                    host_url: base_url.clone(),
                    methods: methods.clone(),
                    attrs: BTreeMap::new(),
                    ttl_s: SELF_REGISTRATION_TTL_S,
                };
                if let Err(e) = state.registry.register(record, Origin::Local, now) {
                    tracing::warn!("self-registration of {name} failed: {e}");
                }
            }
        };
        register_all(&state);
        let mut tick = tokio::time::interval(Duration::from_millis(
            u64::from(SELF_REGISTRATION_TTL_S) * 1000 / 2,
        ));
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        tick.tick().await; // the first tick fires immediately
        loop {
            tokio::select! {
                _ = shutdown.changed() => break,
                _ = tick.tick() => register_all(&state),
            }
        }
    })
}
