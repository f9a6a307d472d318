//! HTTP API over the mvforge recommenders and authoring sessions.

pub mod config;
pub mod error;
pub mod routes;
pub mod state;
pub mod train;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

pub use config::ServerConfig;
pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, Models};

pub const API_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot load models: {0}")]
    Models(mvforge_core::Error),
    #[error("cannot bind {bind}: {source}")]
    Bind { bind: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot flush session logs: {0}")]
    Flush(mvforge_core::Error),
}

/// Loads the configured models; a missing or incompatible file is an error
/// before anything is bound.
pub fn load_state(config: ServerConfig) -> Result<Arc<AppState>, ServeError> {
    for path in [&config.single_model, &config.mv_model] {
        if !path.is_file() {
            return Err(ServeError::Models(mvforge_core::Error::Config(format!(
                "model file {} does not exist",
                path.display()
            ))));
        }
    }
    let models = Models::load(&config.single_model, &config.mv_model).map_err(ServeError::Models)?;
    Ok(AppState::new(config, models))
}

/// Serves until `shutdown` resolves, then flushes consenting sessions.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<Vec<PathBuf>, ServeError> {
    tracing::info!(addr = ?listener.local_addr()?, "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let written = state.flush_all().await.map_err(ServeError::Flush)?;
    tracing::info!(logs = written.len(), "session logs flushed");
    Ok(written)
}

pub async fn serve(config: ServerConfig) -> Result<Vec<PathBuf>, ServeError> {
    let state = load_state(config)?;
    let bind = state.config.bind.clone();
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|source| ServeError::Bind { bind, source })?;
    serve_on(listener, state, shutdown_signal()).await
}

/// Ctrl-C, or SIGTERM on unix.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
