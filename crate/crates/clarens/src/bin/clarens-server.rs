use std::path::PathBuf;
use std::process::ExitCode;

use tracing_subscriber::EnvFilter;

fn usage() -> ExitCode {
    eprintln!("usage: clarens-server --config <path>");
    ExitCode::from(1)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();

    let mut args = std::env::args().skip(1);
    let config_path = match (args.next().as_deref(), args.next()) {
        (Some("--config"), Some(path)) => PathBuf::from(path),
        _ => return usage(),
    };

    let config = match clarens::load_config(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };

    let handle = match clarens::start(config).await {
        Ok(h) => h,
        Err(e) => {
            eprintln!("cannot start server: {e}");
            return ExitCode::from(1);
        }
    };
    tracing::info!("serving at {}", handle.base_url);
    if let Some(udp) = handle.udp_addr {
        tracing::info!("registry publication on udp {udp}");
    }

    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!("signal handler failed: {e}");
    }
    tracing::info!("shutting down");
    handle.shutdown().await;
    ExitCode::SUCCESS
}
