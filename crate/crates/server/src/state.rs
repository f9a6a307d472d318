use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use mvforge_core::chartspec::ChartSpec;
use mvforge_core::featurize::{TableFeatures, EMBEDDING_DIM};
use mvforge_core::ingest::DataTable;
use mvforge_core::mvrank::CHART_EMBEDDING_DIM;
use mvforge_core::neural::{ModelBundle, ModelKind};
use mvforge_core::provenance::{Clock, LogicalClock, Session, SystemClock};
use mvforge_core::recommend::{enumerate_candidates, CandidatePool, PoolOptions, TableContext};
use mvforge_core::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::ServerConfig;
use crate::error::ApiError;

/// The active pair of models. Requests take one `Arc` at the start and keep
/// it, so a swap never mixes versions within a request.
#[derive(Debug)]
pub struct Models {
    pub single: ModelBundle,
    pub mv: ModelBundle,
    pub single_id: String,
    pub mv_id: String,
}

fn check_bundle(bundle: &ModelBundle, kind: ModelKind, input_dim: usize) -> Result<()> {
    if bundle.kind != kind {
        return Err(Error::Config(format!(
            "expected a {} model, got {}",
            kind.as_str(),
            bundle.kind.as_str()
        )));
    }
    if bundle.layout_version != kind.expected_layout() {
        return Err(Error::Layout {
            expected: kind.expected_layout(),
            found: bundle.layout_version,
        });
    }
    if bundle.hyper.scorer.input_dim != input_dim {
        return Err(Error::Shape(format!(
            "{} model takes {} inputs, expected {input_dim}",
            kind.as_str(),
            bundle.hyper.scorer.input_dim
        )));
    }
    Ok(())
}

impl Models {
    pub fn new(single: ModelBundle, mv: ModelBundle) -> Result<Self> {
        check_bundle(&single, ModelKind::SingleChart, EMBEDDING_DIM)?;
        check_bundle(&mv, ModelKind::Mv, CHART_EMBEDDING_DIM)?;
        Ok(Models {
            single_id: single.id(),
            mv_id: mv.id(),
            single,
            mv,
        })
    }

    pub fn load(single: &Path, mv: &Path) -> Result<Self> {
        Models::new(
            ModelBundle::load_kind(single, ModelKind::SingleChart)?,
            ModelBundle::load_kind(mv, ModelKind::Mv)?,
        )
    }

    /// A copy with one bundle replaced.
    pub fn with(&self, bundle: ModelBundle) -> Result<Self> {
        match bundle.kind {
            ModelKind::SingleChart => Models::new(bundle, self.mv.clone()),
            ModelKind::Mv => Models::new(self.single.clone(), bundle),
        }
    }
}

pub struct SessionEntry {
    pub session: Session,
    pub table: DataTable,
    /// Candidate pools keyed by single-model id and dedup flag.
    pools: HashMap<(String, bool), Arc<CandidatePool>>,
}

impl SessionEntry {
    pub fn context<'a>(&'a self, models: &'a Models) -> TableContext<'a> {
        TableContext {
            schema: self.session.schema(),
            features: self.session.features(),
            single: &models.single.model,
        }
    }

    pub fn pool(&mut self, models: &Models, dedup: bool, wide_table_cap: usize) -> Result<Arc<CandidatePool>> {
        let key = (models.single_id.clone(), dedup);
        if let Some(pool) = self.pools.get(&key) {
            return Ok(pool.clone());
        }
        let options = PoolOptions { dedup, wide_table_cap };
        let pool = Arc::new(enumerate_candidates(&self.context(models), options)?);
        self.pools.retain(|(id, _), _| *id == models.single_id);
        self.pools.insert(key, pool.clone());
        Ok(pool)
    }

    pub fn chart(&self, position: usize) -> std::result::Result<&ChartSpec, ApiError> {
        self.session
            .current()
            .charts
            .get(position)
            .map(|c| &c.spec)
            .ok_or_else(|| ApiError::not_found(format!("no chart at position {position}")))
    }
}

#[derive(Debug, Default)]
pub struct Audit {
    /// Successful responses from mutating endpoints.
    pub mutating_responses: AtomicU64,
    /// Provenance events appended by request handlers.
    pub events_appended: AtomicU64,
}

pub struct AppState {
    pub config: ServerConfig,
    models: RwLock<Arc<Models>>,
    sessions: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<SessionEntry>>>>,
    training: [AtomicBool; 2],
    next_session: AtomicU64,
    clock: Arc<dyn Clock>,
    pub audit: Audit,
}

/// Releases a training slot when dropped.
pub struct TrainingGuard {
    state: Arc<AppState>,
    slot: usize,
}

impl Drop for TrainingGuard {
    fn drop(&mut self) {
        self.state.training[self.slot].store(false, Ordering::SeqCst);
    }
}

fn slot(kind: ModelKind) -> usize {
    match kind {
        ModelKind::SingleChart => 0,
        ModelKind::Mv => 1,
    }
}

impl AppState {
    pub fn new(config: ServerConfig, models: Models) -> Arc<Self> {
        let clock: Arc<dyn Clock> = if config.logical_clock {
            Arc::new(LogicalClock::new(0))
        } else {
            Arc::new(SystemClock)
        };
        Arc::new(AppState {
            config,
            models: RwLock::new(Arc::new(models)),
            sessions: Mutex::new(BTreeMap::new()),
            training: [AtomicBool::new(false), AtomicBool::new(false)],
            next_session: AtomicU64::new(0),
            clock,
            audit: Audit::default(),
        })
    }

    pub fn models(&self) -> Arc<Models> {
        self.models.read().expect("models lock").clone()
    }

    pub fn swap_models(&self, models: Models) {
        *self.models.write().expect("models lock") = Arc::new(models);
    }

    /// One training job per model kind; `None` while one is running.
    pub fn try_begin_training(self: &Arc<Self>, kind: ModelKind) -> Option<TrainingGuard> {
        let slot = slot(kind);
        self.training[slot]
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| TrainingGuard {
                state: self.clone(),
                slot,
            })
    }

    /// Ids are a hash of the seed and a counter, so a replayed request
    /// sequence yields the same ids.
    fn next_session_id(&self) -> String {
        let n = self.next_session.fetch_add(1, Ordering::SeqCst);
        let digest = Sha256::digest(format!("{}:{n}", self.config.seed));
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn open_session(&self, table: DataTable) -> (String, Arc<tokio::sync::Mutex<SessionEntry>>) {
        let id = self.next_session_id();
        let features = TableFeatures::from_table(&table);
        let session = Session::open(id.clone(), table.summary(), features, self.clock.clone());
        self.audit.events_appended.fetch_add(1, Ordering::SeqCst);
        let entry = Arc::new(tokio::sync::Mutex::new(SessionEntry {
            session,
            table,
            pools: HashMap::new(),
        }));
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(id.clone(), entry.clone());
        (id, entry)
    }

    pub fn session(&self, id: &str) -> std::result::Result<Arc<tokio::sync::Mutex<SessionEntry>>, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    /// Writes the log of every consenting session; returns the files written.
    pub async fn flush_all(&self) -> Result<Vec<std::path::PathBuf>> {
        let entries: Vec<_> = self.sessions.lock().expect("sessions lock").values().cloned().collect();
        let dir = self.config.logs_dir();
        let mut written = Vec::new();
        for entry in entries {
            if let Some(path) = entry.lock().await.session.flush(&dir)? {
                written.push(path);
            }
        }
        Ok(written)
    }
}
