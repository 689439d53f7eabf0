use clap::{Parser, Subcommand};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use vizarel_core::server::{Server, ServerConfig, DEFAULT_HTTP_PORT, DEFAULT_PORT};
use vizarel_core::storage::{Codec, StoreOptions};

#[derive(Parser)]
#[command(name = "vizarel", version, about = "Telemetry server for reinforcement-learning training runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accept training telemetry and serve the query API.
    Serve {
        /// Directory holding one store per session.
        #[arg(long)]
        data_dir: PathBuf,
        /// Binary ingestion port.
        #[arg(long, env = "VIZAREL_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// HTTP query port.
        #[arg(long, env = "VIZAREL_HTTP_PORT", default_value_t = DEFAULT_HTTP_PORT)]
        http_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Serve static dashboard assets from this directory at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Deflate-compress record bodies.
        #[arg(long)]
        compress: bool,
        /// Maximum experiences queued for the commit thread.
        #[arg(long)]
        queue_capacity: Option<usize>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let Command::Serve { data_dir, port, http_port, host, ui, compress, queue_capacity } = Cli::parse().command;
    let mut store = StoreOptions::default();
    if compress {
        store.codec = Codec::Deflate;
    }
    if let Some(cap) = queue_capacity {
        store.queue_capacity = cap;
    }
    let config = ServerConfig {
        data_dir,
        ingest_addr: SocketAddr::new(host, port),
        http_addr: SocketAddr::new(host, http_port),
        ui_dir: ui,
        store,
    };
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let res = rt.block_on(async {
        let server = Server::bind(config).await?;
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vizarel: {e}");
            ExitCode::FAILURE
        }
    }
}
