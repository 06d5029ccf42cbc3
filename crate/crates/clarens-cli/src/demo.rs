//! Multi-node demo: launches a full mesh of server processes, lets
//! registrations propagate over UDP, then resolves and ranks replicas
//! across nodes.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clarens::acl::{AclEntry, Subject};
use clarens::client::{ClientAuth, RpcClient};
use clarens::journal::JournalEvent;
use clarens::value::RpcValue;
use clarens::Encoding;

use crate::CliError;

const ADMIN_DN: &str = "/CN=Demo Admin";
const PUBLISH_INTERVAL_MS: u64 = 200;

struct Node {
    index: usize,
    http_port: u16,
    child: std::process::Child,
    log_path: PathBuf,
}

impl Node {
    fn url(&self) -> String {
        format!("http://127.0.0.1:{}/clarens", self.http_port)
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn server_binary() -> PathBuf {
    if let Ok(path) = std::env::var("CLARENS_SERVER_BIN") {
        return PathBuf::from(path);
    }
    if let Ok(exe) = std::env::current_exe() {
        let sibling = exe.with_file_name("clarens-server");
        if sibling.exists() {
            return sibling;
        }
    }
    PathBuf::from("clarens-server")
}

fn fail(msg: impl Into<String>) -> CliError {
    CliError::Transport(msg.into())
}

fn admin(url: &str) -> RpcClient {
    RpcClient::new(
        url,
        Encoding::JsonRpc,
        ClientAuth::Header {
            dn: ADMIN_DN.into(),
        },
    )
}

fn seed_journal(path: &PathBuf) -> Result<(), CliError> {
    let events = [
        JournalEvent::AclAdd {
            entry: AclEntry {
                pattern: "*".into(),
                subject: Subject::Dn(ADMIN_DN.into()),
                allow: true,
            },
        },
        // The replica-ranking fan-out queries catalogs without credentials.
        JournalEvent::AclAdd {
            entry: AclEntry {
                pattern: "catalog.lookup".into(),
                subject: Subject::Anonymous,
                allow: true,
            },
        },
    ];
    let mut file = std::fs::File::create(path).map_err(|e| fail(format!("seed journal: {e}")))?;
    for event in events {
        let line = serde_json::to_string(&event).map_err(|e| fail(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| fail(e.to_string()))?;
    }
    Ok(())
}

pub async fn run(n: u16, base_port: u16) -> Result<i32, CliError> {
    if !(2..=5).contains(&n) {
        return Err(CliError::Usage(format!(
            "node count must be between 2 and 5, got {n}"
        )));
    }
    let n = n as usize;
    let dir = tempfile::tempdir().map_err(|e| fail(e.to_string()))?;
    let gridmap_path = dir.path().join("gridmap");
    std::fs::write(&gridmap_path, format!("\"{ADMIN_DN}\" demo\n"))
        .map_err(|e| fail(e.to_string()))?;

    let http_port = |i: usize| base_port + 2 * i as u16;
    let udp_port = |i: usize| base_port + 2 * i as u16 + 1;

    let mut nodes = Vec::new();
    for i in 0..n {
        let peers: Vec<String> = (0..n)
            .filter(|j| *j != i)
            .map(|j| format!("127.0.0.1:{}", udp_port(j)))
            .collect();
        let journal_path = dir.path().join(format!("node{i}.journal"));
        seed_journal(&journal_path)?;
        let mut config = format!(
            "http.port={}\nudp.port={}\nadvertise.host=127.0.0.1\n\
             registry.peers={}\nregistry.purge_interval_ms=250\n\
             registry.publish_interval_ms={PUBLISH_INTERVAL_MS}\n\
             journal.path={}\ngridmap.path={}\n\
             service.echo=builtin\nservice.discovery=builtin\n",
            http_port(i),
            udp_port(i),
            peers.join(","),
            journal_path.display(),
            gridmap_path.display(),
        );
        if i == 0 {
            config.push_str("service.catalog=builtin\n");
        }
        if i == 1 {
            config.push_str("service.metrics=builtin\nservice.dls=builtin\n");
        }
        let config_path = dir.path().join(format!("node{i}.conf"));
        std::fs::write(&config_path, config).map_err(|e| fail(e.to_string()))?;

        let log_path = dir.path().join(format!("node{i}.log"));
        let log = std::fs::File::create(&log_path).map_err(|e| fail(e.to_string()))?;
        let child = std::process::Command::new(server_binary())
            .arg("--config")
            .arg(&config_path)
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::from(log))
            .spawn()
            .map_err(|e| fail(format!("cannot launch server: {e}")))?;
        nodes.push(Node {
            index: i,
            http_port: http_port(i),
            child,
            log_path,
        });
        println!("[demo] node {} on http:{} udp:{}", i + 1, http_port(i), udp_port(i));
    }

    let result = drive(&mut nodes, n).await;
    if result.is_err() {
        for node in &nodes {
            if let Ok(log) = std::fs::read_to_string(&node.log_path) {
                if !log.is_empty() {
                    eprintln!("[demo] node {} log:\n{log}", node.index + 1);
                }
            }
        }
    }
    result
}

async fn drive(nodes: &mut [Node], n: usize) -> Result<i32, CliError> {
    for node in nodes.iter() {
        wait_ready(&node.url()).await?;
    }
    println!("[demo] all {n} servers answering");

    // Propagation: catalog (node 1) and dls (node 2) self-register locally;
    // the last node must learn both through UDP publication alone.
    let last = nodes[n - 1].url();
    let observer = admin(&last);
    let t0 = Instant::now();
    let deadline = t0 + Duration::from_secs(5);
    loop {
        let catalogs = find(&observer, "catalog*").await?;
        let dls = find(&observer, "dls").await?;
        if !catalogs.is_empty() && !dls.is_empty() {
            break;
        }
        if Instant::now() > deadline {
            return Err(fail("registrations did not propagate to the last node"));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let elapsed = t0.elapsed();
    println!(
        "[demo] catalog and dls visible at node {n} after {:?} (publication interval {PUBLISH_INTERVAL_MS} ms)",
        elapsed
    );
    if elapsed > Duration::from_millis(3 * PUBLISH_INTERVAL_MS) {
        return Err(fail(format!(
            "propagation took {elapsed:?}, more than 2 publication intervals (+1 tolerance)"
        )));
    }

    // Populate replicas at node 1 and measurements at node 2.
    let catalog = admin(&nodes[0].url());
    for (pfn, size) in [
        ("gsiftp://StorageA/demo-f1", 2.0e8),
        ("gsiftp://StorageB/demo-f1", 2.0e8),
    ] {
        catalog
            .call(
                "catalog.add",
                &[
                    RpcValue::string("demo/f1"),
                    RpcValue::string(pfn),
                    RpcValue::Double(size),
                ],
            )
            .await?;
    }
    println!("[demo] two replicas of demo/f1 registered in the catalog at node 1");

    let metrics = admin(&nodes[1].url());
    for (dst, rtt, bw) in [("StorageA", 0.05, 1.0e7), ("StorageB", 0.01, 5.0e6)] {
        metrics
            .call(
                "metrics.report",
                &[clarens::plugin::structure([
                    ("src", RpcValue::string("demo-client")),
                    ("dst", RpcValue::string(dst)),
                    ("rtt_s", RpcValue::Double(rtt)),
                    ("bandwidth_Bps", RpcValue::Double(bw)),
                ])],
            )
            .await?;
    }
    println!("[demo] link measurements reported to node 2");

    // Find the dls through discovery at the last node, then rank replicas.
    let servers = observer
        .call("discovery.find_server", &[RpcValue::string("dls")])
        .await?;
    let dls_url = servers
        .as_array()
        .and_then(|a| a.first())
        .and_then(RpcValue::as_str)
        .ok_or_else(|| fail("find_server(\"dls\") returned nothing"))?
        .to_string();
    println!("[demo] node {n} discovered the dls at {dls_url}");

    let dls = admin(&dls_url);
    let deadline = Instant::now() + Duration::from_secs(3);
    let located = loop {
        match dls
            .call(
                "dls.locate",
                &[
                    RpcValue::string("demo/f1"),
                    RpcValue::Int(0),
                    RpcValue::Int(10),
                    RpcValue::string("demo-client"),
                ],
            )
            .await
        {
            Ok(v) => break v,
            Err(e) if Instant::now() > deadline => return Err(e.into()),
            Err(_) => tokio::time::sleep(Duration::from_millis(100)).await,
        }
    };
    let m = located
        .as_struct()
        .ok_or_else(|| fail("locate returned a non-struct"))?;
    let total = m.get("total").and_then(RpcValue::as_i32).unwrap_or(0);
    if total != 2 {
        return Err(fail(format!("expected 2 replicas, got {total}")));
    }
    let page = m.get("page").and_then(RpcValue::as_array).unwrap_or(&[]);
    println!("[demo] ranked replicas of demo/f1:");
    for s in page {
        println!("[demo]   {}", clarens::jsonrpc::value_to_json(s));
    }
    let best = page
        .first()
        .and_then(RpcValue::as_struct)
        .and_then(|s| s.get("host"))
        .and_then(RpcValue::as_str)
        .unwrap_or("");
    if best != "StorageA" {
        return Err(fail(format!("expected StorageA ranked first, got {best:?}")));
    }

    // Both encodings agree through the same URL.
    for encoding in [Encoding::XmlRpc, Encoding::JsonRpc] {
        let probe = RpcClient::new(&last, encoding, ClientAuth::None);
        let v = probe
            .call("echo.echo", &[RpcValue::string("mesh-ok")])
            .await?;
        if v != RpcValue::string("mesh-ok") {
            return Err(fail(format!("echo mismatch over {}", encoding.as_str())));
        }
    }
    println!("[demo] echo agrees over xmlrpc and jsonrpc at one URL");
    println!("[demo] PASS");
    Ok(0)
}

async fn wait_ready(url: &str) -> Result<(), CliError> {
    let probe = RpcClient::with_timeout(
        url,
        Encoding::JsonRpc,
        ClientAuth::None,
        Duration::from_millis(500),
    );
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match probe.call("echo.echo", &[RpcValue::string("ping")]).await {
            Ok(_) => return Ok(()),
            Err(_) if Instant::now() < deadline => {
                tokio::time::sleep(Duration::from_millis(50)).await
            }
            Err(e) => return Err(fail(format!("server at {url} never became ready: {e}"))),
        }
    }
}

async fn find(client: &RpcClient, pattern: &str) -> Result<Vec<RpcValue>, CliError> {
    let v = client
        .call("discovery.find", &[RpcValue::string(pattern)])
        .await?;
    Ok(v.as_array().unwrap_or(&[]).to_vec())
}
