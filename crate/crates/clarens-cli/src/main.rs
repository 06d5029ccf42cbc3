//! `clarens` — command-line client for the grid services framework.
//!
//! Exit codes: 0 success, 1 usage, 2 network/transport, 3 remote fault;
//! `run` exits with the remote command's exit code.

mod demo;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use clarens::client::{ClientAuth, ClientError, RpcClient};
use clarens::jsonrpc::value_to_json;
use clarens::value::RpcValue;
use clarens::Encoding;
use clarens_cli::literal::parse_literal;

#[derive(Parser)]
#[command(name = "clarens", version, about = "Client for the clarens grid services framework")]
struct Cli {
    /// Server RPC endpoint.
    #[arg(long, global = true, default_value = "http://127.0.0.1:8080/clarens")]
    server: String,

    /// Wire encoding for requests.
    #[arg(long, global = true, value_enum, default_value_t = EncodingArg::Jsonrpc)]
    encoding: EncodingArg,

    /// Authentication scheme.
    #[arg(long, global = true, value_enum, default_value_t = AuthArg::None)]
    auth: AuthArg,

    /// Distinguished name to present.
    #[arg(long, global = true, default_value = "")]
    dn: String,

    /// Shared secret for --auth hmac.
    #[arg(long, global = true)]
    secret: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Xmlrpc,
    Jsonrpc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuthArg {
    None,
    Header,
    Hmac,
}

#[derive(Subcommand)]
enum Command {
    /// Invoke any service.method with typed literal parameters.
    Call {
        method: String,
        params: Vec<String>,
    },
    /// Run a remote command: submit, poll to completion, stream outputs,
    /// exit with the remote exit code.
    Run {
        command: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        argv: Vec<String>,
    },
    /// Query the discovery registry.
    Discover {
        #[arg(default_value = "*")]
        pattern: String,
        /// Attribute filters, key=value; repeatable.
        #[arg(long = "attr")]
        attrs: Vec<String>,
    },
    /// List a directory in the remote file jail.
    Ls {
        #[arg(default_value = "")]
        path: String,
    },
    /// Download a remote file (to a local path, or stdout).
    Get {
        remote: String,
        local: Option<PathBuf>,
    },
    /// Upload a local file into the remote jail.
    Put {
        local: PathBuf,
        remote: String,
    },
    /// Launch an n-node full-mesh demo and exercise discovery plus
    /// replica ranking across it.
    DemoMesh {
        #[arg(short = 'n', long = "nodes", default_value_t = 3)]
        nodes: u16,
        #[arg(long, default_value_t = 18000)]
        base_port: u16,
    },
}

enum CliError {
    Usage(String),
    Transport(String),
    Fault(clarens::Fault),
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Network(m) => CliError::Transport(m),
            ClientError::Protocol(m) => CliError::Transport(m),
            ClientError::Fault(f) => CliError::Fault(f),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .expect("tokio runtime");
    match runtime.block_on(dispatch(cli)) {
        Ok(code) => ExitCode::from(code.min(255) as u8),
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Transport(msg)) => {
            eprintln!("transport error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Fault(f)) => {
            eprintln!("{f}");
            ExitCode::from(3)
        }
    }
}

fn client_for(cli: &Cli) -> Result<RpcClient, CliError> {
    let encoding = match cli.encoding {
        EncodingArg::Xmlrpc => Encoding::XmlRpc,
        EncodingArg::Jsonrpc => Encoding::JsonRpc,
    };
    let auth = match cli.auth {
        AuthArg::None => ClientAuth::None,
        AuthArg::Header => {
            if cli.dn.is_empty() {
                return Err(CliError::Usage("--auth header requires --dn".into()));
            }
            ClientAuth::Header { dn: cli.dn.clone() }
        }
        AuthArg::Hmac => {
            let secret = cli
                .secret
                .clone()
                .ok_or_else(|| CliError::Usage("--auth hmac requires --secret".into()))?;
            if cli.dn.is_empty() {
                return Err(CliError::Usage("--auth hmac requires --dn".into()));
            }
            ClientAuth::Hmac {
                dn: cli.dn.clone(),
                secret,
            }
        }
    };
    Ok(RpcClient::new(cli.server.clone(), encoding, auth))
}

async fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Call { method, params } => {
            let client = client_for(&cli)?;
            let values = params
                .iter()
                .map(|p| parse_literal(p).map_err(CliError::Usage))
                .collect::<Result<Vec<_>, _>>()?;
            let result = client.call(method, &values).await?;
            println!("{}", value_to_json(&result));
            Ok(0)
        }
        Command::Run { command, argv } => run_remote(&cli, command, argv).await,
        Command::Discover { pattern, attrs } => {
            let client = client_for(&cli)?;
            let mut filter = std::collections::BTreeMap::new();
            for a in attrs {
                let (k, v) = a
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--attr needs key=value, got {a:?}")))?;
                filter.insert(k.to_string(), RpcValue::string(v));
            }
            let records = client
                .call(
                    "discovery.find",
                    &[RpcValue::string(pattern.as_str()), RpcValue::Struct(filter)],
                )
                .await?;
            for record in records.as_array().unwrap_or(&[]) {
                println!("{}", value_to_json(record));
            }
            Ok(0)
        }
        Command::Ls { path } => {
            let client = client_for(&cli)?;
            let entries = client
                .call("file.ls", &[RpcValue::string(path.as_str())])
                .await?;
            for entry in entries.as_array().unwrap_or(&[]) {
                println!("{}", value_to_json(entry));
            }
            Ok(0)
        }
        Command::Get { remote, local } => {
            let client = client_for(&cli)?;
            let bytes = fetch_file(&client, remote).await?;
            match local {
                Some(path) => std::fs::write(path, &bytes)
                    .map_err(|e| CliError::Transport(format!("write {path:?}: {e}")))?,
                None => std::io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| CliError::Transport(e.to_string()))?,
            }
            Ok(0)
        }
        Command::Put { local, remote } => {
            let client = client_for(&cli)?;
            let bytes = std::fs::read(local)
                .map_err(|e| CliError::Transport(format!("read {local:?}: {e}")))?;
            let mut written = 0usize;
            let mut append = false;
            // Page uploads so each RPC body stays bounded; an empty file
            // still takes one call to create it.
            let chunks: Vec<&[u8]> = if bytes.is_empty() {
                vec![&[]]
            } else {
                bytes.chunks(512 * 1024).collect()
            };
            for chunk in chunks {
                let n = client
                    .call(
                        "file.put",
                        &[
                            RpcValue::string(remote.as_str()),
                            RpcValue::Base64(chunk.to_vec()),
                            RpcValue::Bool(append),
                        ],
                    )
                    .await?;
                written += n.as_i32().unwrap_or(0) as usize;
                append = true;
            }
            println!("{written}");
            Ok(0)
        }
        Command::DemoMesh { nodes, base_port } => demo::run(*nodes, *base_port).await,
    }
}

const POLL_INTERVAL: Duration = Duration::from_millis(250);
const GET_PAGE: usize = 64 * 1024;

async fn fetch_file(client: &RpcClient, remote: &str) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    loop {
        let chunk = client
            .call(
                "file.get",
                &[
                    RpcValue::string(remote),
                    RpcValue::Int(out.len() as i32),
                    RpcValue::Int(GET_PAGE as i32),
                ],
            )
            .await?;
        let bytes = chunk
            .as_bytes()
            .ok_or_else(|| CliError::Transport("file.get returned non-bytes".into()))?;
        out.extend_from_slice(bytes);
        if bytes.len() < GET_PAGE {
            return Ok(out);
        }
    }
}

async fn run_remote(cli: &Cli, command: &str, argv: &[String]) -> Result<i32, CliError> {
    let client = client_for(cli)?;
    let argv_value = RpcValue::Array(argv.iter().map(|a| RpcValue::string(a.as_str())).collect());
    let id = client
        .call("shell.cmd", &[RpcValue::string(command), argv_value])
        .await?;
    let id = id
        .as_str()
        .ok_or_else(|| CliError::Transport("shell.cmd returned a non-string id".into()))?
        .to_string();

    let final_state = loop {
        let info = client.call("shell.cmd_info", &[RpcValue::string(&id)]).await?;
        let m = info
            .as_struct()
            .cloned()
            .ok_or_else(|| CliError::Transport("cmd_info returned a non-struct".into()))?;
        let state = m
            .get("state")
            .and_then(RpcValue::as_str)
            .unwrap_or("")
            .to_string();
        if matches!(state.as_str(), "FINISHED" | "FAILED" | "KILLED") {
            break m;
        }
        tokio::time::sleep(POLL_INTERVAL).await;
    };

    let stdout = fetch_file(&client, &format!("jobs/{id}/stdout")).await?;
    std::io::stdout()
        .write_all(&stdout)
        .map_err(|e| CliError::Transport(e.to_string()))?;
    let stderr = fetch_file(&client, &format!("jobs/{id}/stderr")).await?;
    std::io::stderr()
        .write_all(&stderr)
        .map_err(|e| CliError::Transport(e.to_string()))?;

    let state = final_state
        .get("state")
        .and_then(RpcValue::as_str)
        .unwrap_or("");
    if state == "KILLED" {
        return Ok(137);
    }
    Ok(final_state
        .get("exit_code")
        .and_then(RpcValue::as_i32)
        .unwrap_or(-1))
}
