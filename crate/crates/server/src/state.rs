//! Shared corpus, sessions and clustering jobs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ledgerlens::{ClusterOutcome, Corpus, EntitySet, MeasureTable, NodeId, Tree64};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use uuid::Uuid;

use crate::error::{ApiError, ApiResult};
use crate::wire::ClusterResultView;

pub const DEFAULT_SESSION_TIMEOUT: Duration = Duration::from_secs(2 * 60 * 60);
pub const DEFAULT_PAGE_SIZE: usize = 400;
pub const MAX_PAGE_SIZE: usize = 10_000;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { session_timeout: DEFAULT_SESSION_TIMEOUT }
    }
}

/// A finished clustering run for one node, tied to the node generation it saw.
#[derive(Debug)]
pub struct ClusterResult {
    pub generation: u64,
    pub outcome: ClusterOutcome<f64>,
}

impl ClusterResult {
    pub fn view(&self) -> ClusterResultView {
        let o = &self.outcome;
        ClusterResultView {
            node: o.request.node,
            generation: self.generation,
            k: o.request.k,
            seed: o.seed(),
            features: o.request.features.clone(),
            excluded: o.excluded,
            iterations: o.iterations,
            converged: o.converged,
            inertia_history: o.inertia_history.clone(),
            clusters: o.summaries.clone(),
        }
    }
}

pub struct Session {
    pub id: Uuid,
    pub created: i64,
    pub from: i64,
    pub to: i64,
    pub table: Arc<MeasureTable>,
    pub tree: Tree64,
    /// Latest result per node.
    pub clusters: HashMap<NodeId, Arc<ClusterResult>>,
    pub job: Option<Uuid>,
}

impl Session {
    pub fn node_set(&self, node: Option<NodeId>) -> ApiResult<(NodeId, &EntitySet)> {
        let id = node.unwrap_or(self.tree.selected());
        Ok((id, &self.tree.node(id)?.set))
    }

    /// Cluster result for `node` if it still matches the node's generation.
    pub fn current_cluster(&self, node: NodeId) -> Option<&Arc<ClusterResult>> {
        let generation = self.tree.node(node).ok()?.generation;
        self.clusters.get(&node).filter(|r| r.generation == generation)
    }
}

pub struct SessionSlot {
    pub last_used: Mutex<Instant>,
    pub inner: RwLock<Session>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done { result: ClusterResultView },
    Failed { error: String, message: String },
    Cancelled,
}

pub struct Job {
    pub id: Uuid,
    pub session: Uuid,
    pub node: NodeId,
    pub cancel: AtomicBool,
    pub status: Mutex<JobStatus>,
}

impl Job {
    pub fn is_running(&self) -> bool {
        matches!(*self.status.lock(), JobStatus::Running)
    }

    pub fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }
}

pub struct AppState {
    pub corpus: Arc<Corpus>,
    pub config: ServerConfig,
    sessions: RwLock<HashMap<Uuid, Arc<SessionSlot>>>,
    jobs: Mutex<HashMap<Uuid, Arc<Job>>>,
}

pub fn unix_now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

impl AppState {
    pub fn new(corpus: Arc<Corpus>, config: ServerConfig) -> Self {
        Self { corpus, config, sessions: RwLock::new(HashMap::new()), jobs: Mutex::new(HashMap::new()) }
    }

    /// Full corpus span as a half-open range; `[0, 1)` for an empty corpus.
    pub fn default_range(&self) -> (i64, i64) {
        self.corpus.store.time_bounds().map_or((0, 1), |(lo, hi)| (lo, hi + 1))
    }

    pub fn measures(&self, from: i64, to: i64) -> ApiResult<Arc<MeasureTable>> {
        Ok(Arc::new(self.corpus.slices.compute_measures(None, from, to)?))
    }

    pub fn insert_session(&self, session: Session) -> Uuid {
        let id = session.id;
        let slot = SessionSlot { last_used: Mutex::new(Instant::now()), inner: RwLock::new(session) };
        self.sessions.write().insert(id, Arc::new(slot));
        id
    }

    pub fn session(&self, id: Uuid) -> ApiResult<Arc<SessionSlot>> {
        let slot = self
            .sessions
            .read()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_session", format!("no session {id}")))?;
        *slot.last_used.lock() = Instant::now();
        Ok(slot)
    }

    pub fn remove_session(&self, id: Uuid) -> bool {
        let removed = self.sessions.write().remove(&id).is_some();
        if removed {
            self.jobs.lock().retain(|_, job| {
                if job.session == id {
                    job.cancel.store(true, Ordering::Relaxed);
                    false
                } else {
                    true
                }
            });
        }
        removed
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    /// Drops sessions idle for longer than the configured timeout.
    pub fn expire_idle(&self, now: Instant) -> usize {
        let timeout = self.config.session_timeout;
        let stale: Vec<Uuid> = self
            .sessions
            .read()
            .iter()
            .filter(|(_, s)| now.saturating_duration_since(*s.last_used.lock()) > timeout)
            .map(|(id, _)| *id)
            .collect();
        stale.iter().filter(|&&id| self.remove_session(id)).count()
    }

    pub fn insert_job(&self, job: Arc<Job>) {
        self.jobs.lock().insert(job.id, job);
    }

    pub fn job(&self, id: Uuid) -> ApiResult<Arc<Job>> {
        self.jobs.lock().get(&id).cloned().ok_or_else(|| ApiError::not_found("unknown_job", format!("no job {id}")))
    }
}
