//! HTTP/JSON session service over a loaded corpus.
//!
//! All endpoints live under `/api/v1`. Each session owns a classification
//! tree over the entities active in its time range; clustering runs as a
//! background job that clients poll at `/api/v1/jobs/{id}`.

mod error;
mod routes;
mod state;
pub mod wire;

use std::future::Future;
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use ledgerlens::Corpus;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, ServerConfig, DEFAULT_PAGE_SIZE, DEFAULT_SESSION_TIMEOUT};

/// Builds the shared state and starts the idle-session reaper.
pub fn app_state(corpus: Arc<Corpus>, config: ServerConfig) -> Arc<AppState> {
    let state = Arc::new(AppState::new(corpus, config));
    spawn_reaper(Arc::downgrade(&state));
    state
}

fn spawn_reaper(state: Weak<AppState>) {
    let period = state
        .upgrade()
        .map_or(Duration::from_secs(60), |s| (s.config.session_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(60)));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let Some(state) = state.upgrade() else { break };
            let expired = state.expire_idle(Instant::now());
            if expired > 0 {
                tracing::info!(expired, "expired idle sessions");
            }
        }
    });
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    corpus: Arc<Corpus>,
    config: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let state = app_state(corpus, config);
    tracing::info!(addr = %listener.local_addr()?, corpus = %state.corpus.id, "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
