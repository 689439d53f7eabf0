//! Binary ingestion endpoint and HTTP query surface over per-session stores.

pub mod http;
pub mod ingest;
pub mod jobs;
pub mod registry;

pub use http::{router, AppState};
pub use ingest::{serve_connection, IngestSession};
pub use jobs::{compute_projection, JobStatus, ProjectionJobs, ProjectionRequest, ProjectionResponse};
pub use registry::{session_dir_name, Registry, SessionInfo};

use crate::storage::{StorageError, StoreOptions};
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinSet;

pub const DEFAULT_PORT: u16 = 7007;
pub const DEFAULT_HTTP_PORT: u16 = 7008;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    /// Binary ingestion address; port 0 picks a free port.
    pub ingest_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub ui_dir: Option<PathBuf>,
    pub store: StoreOptions,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> ServerConfig {
        ServerConfig {
            data_dir: data_dir.into(),
            ingest_addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            http_addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_HTTP_PORT)),
            ui_dir: None,
            store: StoreOptions::default(),
        }
    }
}

/// A server with both listeners bound but not yet accepting.
pub struct Server {
    state: AppState,
    ingest: TcpListener,
    http: TcpListener,
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })
}

impl Server {
    pub async fn bind(config: ServerConfig) -> Result<Server, ServerError> {
        let registry = Arc::new(Registry::open(&config.data_dir, config.store.clone())?);
        let state = AppState { registry, jobs: Arc::new(ProjectionJobs::new()), ui_dir: config.ui_dir.clone() };
        Ok(Server { state, ingest: bind(config.ingest_addr).await?, http: bind(config.http_addr).await? })
    }

    pub fn ingest_addr(&self) -> SocketAddr {
        self.ingest.local_addr().expect("bound listener")
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http.local_addr().expect("bound listener")
    }

    pub fn registry(&self) -> Arc<Registry> {
        self.state.registry.clone()
    }

    /// Serves until `shutdown` resolves, then flushes every open session.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServerError> {
        let (stop_tx, stop_rx) = watch::channel(false);
        let app = router(self.state.clone());
        tracing::info!(ingest = %self.ingest.local_addr()?, http = %self.http.local_addr()?, "serving");
        let mut http_stop = stop_rx.clone();
        let http = tokio::spawn(async move {
            axum::serve(self.http, app)
                .with_graceful_shutdown(async move {
                    let _ = http_stop.changed().await;
                })
                .await
        });

        let mut conns = JoinSet::new();
        let mut accept_stop = stop_rx.clone();
        let signal = tokio::spawn(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        });
        loop {
            tokio::select! {
                accepted = self.ingest.accept() => match accepted {
                    Ok((stream, peer)) => {
                        tracing::debug!(%peer, "ingest connection");
                        let _ = stream.set_nodelay(true);
                        conns.spawn(serve_connection(stream, self.state.registry.clone(), stop_rx.clone()));
                    }
                    Err(e) => tracing::warn!("accept failed: {e}"),
                },
                _ = accept_stop.changed() => break,
            }
        }
        self.state.jobs.cancel_all();
        while conns.join_next().await.is_some() {}
        signal.abort();
        http.await.map_err(std::io::Error::other)??;
        Ok(())
    }
}
