//! Local HTTP facade over one file-backed triage session.
//!
//! All mutations go through a single writer that persists the session file
//! before the new state becomes visible. Reads serve the last committed
//! snapshot. See `docs/formats.md` for the endpoint reference.

mod api;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

pub use api::{ApiEnvelope, ApiError, AppState, Health, MutationResult, SessionView, API_SCHEMA_VERSION, IF_REVISION_NEWER};
pub use store::{write_atomically, SessionStore, Snapshot};

pub const DEFAULT_POLL_TIMEOUT: Duration = Duration::from_secs(25);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] sourcerer_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },

    #[error("refusing to bind non-loopback address {0} without allow_remote")]
    RemoteBindRefused(SocketAddr),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub session_path: PathBuf,
    pub addr: SocketAddr,
    /// Directory with the built triage UI, served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
    pub allow_remote: bool,
    pub poll_timeout: Duration,
}

impl ServeOptions {
    pub fn new(session_path: impl Into<PathBuf>) -> Self {
        ServeOptions {
            session_path: session_path.into(),
            addr: SocketAddr::from(([127, 0, 0, 1], 8750)),
            ui_dir: None,
            allow_remote: false,
            poll_timeout: DEFAULT_POLL_TIMEOUT,
        }
    }
}

/// The full application: API routes plus the optional static UI.
pub fn app(state: Arc<AppState>, ui_dir: Option<&std::path::Path>) -> Router {
    let router = api::router(state);
    match ui_dir {
        Some(dir) => router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => router,
    }
}

/// A running service. Dropping the handle leaves the server running until
/// the runtime shuts down; call [`ServiceHandle::shutdown`] to stop it.
#[derive(Debug)]
pub struct ServiceHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }

    /// Runs until the server exits on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        let _keep = self.stop;
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

/// Loads the session at `options.session_path` and starts serving it.
pub async fn serve(options: ServeOptions) -> Result<ServiceHandle, ServiceError> {
    if !options.addr.ip().is_loopback() {
        if !options.allow_remote {
            return Err(ServiceError::RemoteBindRefused(options.addr));
        }
        log::warn!(
            "binding {} exposes the session to the network without authentication",
            options.addr
        );
    }
    let store = SessionStore::open(&options.session_path)?;
    let state = Arc::new(AppState {
        store,
        poll_timeout: options.poll_timeout,
    });
    let listener = TcpListener::bind(options.addr)
        .await
        .map_err(|source| ServiceError::BindFailure { addr: options.addr, source })?;
    let addr = listener.local_addr().map_err(|source| ServiceError::BindFailure { addr: options.addr, source })?;
    let router = app(state.clone(), options.ui_dir.as_deref());
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    log::info!("serving {} on http://{addr}", options.session_path.display());
    Ok(ServiceHandle {
        addr,
        state,
        stop: Some(stop),
        task,
    })
}
