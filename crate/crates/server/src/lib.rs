//! HTTP front end for the caremesh coordinator.
//!
//! One process holds the event log. Mutating requests are queued to a single
//! command thread; queries and mailbox streams read concurrently. The
//! service reports ready on `/readyz` only once the log has been replayed.
//!
//! Every request and response body is canonical JSON, the same encoding the
//! event log uses. Errors are `{"code":..,"message":..}` with the
//! coordinator's error code passed through verbatim.

pub mod config;
pub mod engine;
pub mod error;
pub mod routes;
pub mod stream;
pub mod tokens;
pub mod wire;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use caremesh_core::{Coordinator, EventLog, Hub, StoreError};
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tokio::task::JoinHandle;

pub use config::{ClockMode, Config};
pub use error::ApiError;
pub use routes::{router, AppState, Digests, MailboxPage};
pub use tokens::{Principal, TokenFile, TokenTable};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("event log is corrupt: {0}")]
    LogCorrupt(#[from] StoreError),
    #[error(transparent)]
    Tokens(#[from] tokens::TokenError),
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Loads the token table, binds, and serves until `shutdown` resolves.
pub async fn serve(
    config: Config,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let tokens = TokenTable::load(&config.token_file)?;
    let listener = bind(config.bind).await?;
    run(listener, config, tokens, shutdown).await
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure { addr, source })
}

/// Serves on an already bound listener.
///
/// The listener answers `/healthz` at once and `/readyz` with 503 until the
/// log replay finishes. A corrupt log stops the server with
/// [`ServeError::LogCorrupt`]. On shutdown, open streams end, in-flight
/// requests complete, and queued commands drain before this returns.
pub async fn run(
    listener: TcpListener,
    config: Config,
    tokens: TokenTable,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let addr = listener.local_addr()?;
    let (stop_tx, stop_rx) = watch::channel(false);
    let state = AppState::new(
        tokens,
        Duration::from_secs(config.heartbeat_secs),
        stop_rx.clone(),
    );
    let app = routes::router(state.clone());
    let mut server_stop = stop_rx.clone();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = server_stop.wait_for(|stop| *stop).await;
            })
            .await
    });
    tracing::info!(%addr, log = %config.log_path.display(), "listening, replaying log");

    let opened = {
        let config = config.clone();
        tokio::task::spawn_blocking(move || {
            let log = EventLog::open(&config.log_path, config.log_options())?;
            Coordinator::from_log_with_hub(log, Hub::new(config.stream_buffer))
        })
        .await
        .expect("replay task panicked")
    };
    let coordinator = match opened {
        Ok(c) => c,
        Err(e) => {
            tracing::error!(error = %e, "cannot load event log");
            let _ = stop_tx.send(true);
            let _ = server.await;
            return Err(ServeError::LogCorrupt(e));
        }
    };
    tracing::info!(
        events = coordinator.log().head(),
        participants = coordinator.state().participants().count(),
        "ready"
    );
    let engine = Arc::new(engine::Engine::start(coordinator));
    state.install(engine.clone());

    shutdown.await;
    tracing::info!("shutting down");
    let _ = stop_tx.send(true);
    let served = server.await.expect("server task panicked");
    tokio::task::spawn_blocking(move || engine.stop())
        .await
        .expect("drain task panicked");
    served?;
    Ok(())
}

/// A server running on a background task, for tests and embedding.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), ServeError>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops the server and waits until the log is quiescent.
    pub async fn stop(mut self) -> Result<(), ServeError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        (&mut self.task).await.expect("server task panicked")
    }
}

/// Binds `config.bind` (port 0 picks a free port) and serves in the
/// background until [`ServerHandle::stop`].
pub async fn start(config: Config, tokens: TokenTable) -> Result<ServerHandle, ServeError> {
    let listener = bind(config.bind).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(run(listener, config, tokens, async move {
        let _ = stopped.await;
    }));
    Ok(ServerHandle {
        addr,
        stop: Some(stop),
        task,
    })
}
