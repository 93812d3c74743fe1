//! HTTP/JSON service over `cprism-core`.
//!
//! A session holds one ingested dataset with its fitted propensity model,
//! a store of discovered and user-defined subgroups, and at most one running
//! discovery job. Long searches are started with `POST .../discover` and
//! polled through `GET .../jobs/{job_id}`.

pub mod error;
mod routes;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use axum::Router;

pub use error::ApiError;
use session::Session;

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Sessions are mirrored here as JSON and reloaded on start.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            snapshot_dir: None,
        }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Default)]
struct Inner {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_session: AtomicUsize,
    snapshot_dir: Option<PathBuf>,
}

impl AppState {
    /// Creates the state, loading every snapshot found in `snapshot_dir`.
    pub fn new(snapshot_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let mut sessions = HashMap::new();
        let mut highest = 0;
        if let Some(dir) = &snapshot_dir {
            std::fs::create_dir_all(dir)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for path in paths {
                match Session::restore(&path) {
                    Ok(s) => {
                        if let Some(k) = s.id.strip_prefix("session-").and_then(|k| k.parse().ok()) {
                            highest = highest.max(k);
                        }
                        tracing::info!(session = %s.id, "restored snapshot");
                        sessions.insert(s.id.clone(), Arc::new(s));
                    }
                    Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping snapshot"),
                }
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                sessions: RwLock::new(sessions),
                next_session: AtomicUsize::new(highest),
                snapshot_dir,
            }),
        })
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().unwrap().len()
    }

    fn next_session_id(&self) -> String {
        format!("session-{}", self.inner.next_session.fetch_add(1, Ordering::Relaxed) + 1)
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
    }

    fn insert(&self, session: Arc<Session>) {
        self.inner.sessions.write().unwrap().insert(session.id.clone(), session);
    }

    fn persist(&self, session: &Session) {
        if let Some(dir) = &self.inner.snapshot_dir {
            if let Err(e) = session.save(dir) {
                tracing::warn!(session = %session.id, error = %e, "snapshot write failed");
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    routes::router(state)
}

pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let state = AppState::new(config.snapshot_dir.clone())?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, sessions = state.session_count(), "listening");
    axum::serve(listener, router(state)).await
}
