use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::http::StatusCode;
use serde::{Deserialize, Serialize};
use wayfinder_core::evaluation::EvalReport;
use wayfinder_core::geometry::Direction;
use wayfinder_core::geometry::FloorPoint;
use wayfinder_core::localization::{LocalizationConfig, LocalizationResult};
use wayfinder_core::map::{load_map, save_map, BoundaryDelta, Destination, EvolutionGate, TopometricMap};
use wayfinder_core::navigation::{Instruction, NavConfig, NavGraph};
use wayfinder_core::synthetic::{SurveyPlan, SyntheticWorld, WorldConfig};

use crate::error::ApiError;

/// Ground truth stored next to a synthetic map as `world.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub world: WorldConfig,
    pub survey: SurveyPlan,
}

pub const WORLD_FILE: &str = "world.json";

pub fn read_world(dir: &Path) -> Result<Option<WorldFile>, ApiError> {
    let path = dir.join(WORLD_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| ApiError::bad_request("invalid_map", format!("{}: {e}", path.display())))
}

pub fn write_world(dir: &Path, world: &WorldFile) -> Result<(), ApiError> {
    let path = dir.join(WORLD_FILE);
    let text = serde_json::to_string_pretty(world).expect("world config serializes");
    fs::write(&path, text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub map_root: PathBuf,
    pub localization: LocalizationConfig,
    pub nav: NavConfig,
    pub gate: EvolutionGate,
    /// Admit well-localized queries into the live map.
    pub evolve: bool,
}

impl ServiceConfig {
    pub fn new(map_root: impl Into<PathBuf>) -> Self {
        Self {
            map_root: map_root.into(),
            localization: LocalizationConfig::default(),
            nav: NavConfig::default(),
            gate: EvolutionGate::default(),
            evolve: true,
        }
    }
}

/// A map version together with the graph built for it.
#[derive(Debug)]
pub struct Published {
    pub map: Arc<TopometricMap>,
    pub graph: Arc<NavGraph>,
}

impl Published {
    pub fn build(map: TopometricMap, nav: NavConfig) -> Self {
        let graph = NavGraph::build(&map, nav);
        Self {
            map: Arc::new(map),
            graph: Arc::new(graph),
        }
    }
}

pub struct MapEntry {
    pub id: String,
    pub dir: PathBuf,
    current: RwLock<Arc<Published>>,
    /// Serializes mutations; readers never take it.
    edits: Mutex<()>,
    /// Evolved images not yet written to disk.
    dirty: AtomicBool,
    pub world: Option<Arc<(SyntheticWorld, WorldFile)>>,
}

impl MapEntry {
    pub fn new(id: String, dir: PathBuf, published: Published, world: Option<WorldFile>) -> Self {
        Self {
            id,
            dir,
            current: RwLock::new(Arc::new(published)),
            edits: Mutex::new(()),
            dirty: AtomicBool::new(false),
            world: world.map(|w| Arc::new((SyntheticWorld::new(w.world.clone()), w))),
        }
    }

    pub fn current(&self) -> Arc<Published> {
        self.current.read().expect("map lock").clone()
    }

    /// Applies `edit` to a copy of the current map and publishes the result
    /// as one step. `expected` guards against stale edits. The edit may
    /// return a boundary delta so the graph is updated incrementally.
    pub fn mutate<T>(
        &self,
        nav: NavConfig,
        expected: Option<u64>,
        persist: bool,
        edit: impl FnOnce(&mut TopometricMap) -> Result<(T, Option<BoundaryDelta>), ApiError>,
    ) -> Result<(T, Arc<Published>), ApiError> {
        let _guard = self.edits.lock().expect("edit lock");
        let base = self.current();
        if let Some(v) = expected {
            if v != base.map.version() {
                return Err(ApiError::version_conflict(v, base.map.version()));
            }
        }
        let mut map = (*base.map).clone();
        let (out, delta) = edit(&mut map)?;
        let graph = match delta.and_then(|d| base.graph.rebuild_on_edit(&d).ok()) {
            Some(g) if g.version() == map.version() => g,
            _ => NavGraph::build(&map, nav),
        };
        if persist {
            save_map(&map, &self.dir)?;
            self.dirty.store(false, Ordering::SeqCst);
        } else {
            self.dirty.store(true, Ordering::SeqCst);
        }
        let published = Arc::new(Published {
            map: Arc::new(map),
            graph: Arc::new(graph),
        });
        *self.current.write().expect("map lock") = published.clone();
        Ok((out, published))
    }

    /// Writes the map if evolution changed it since the last save.
    pub fn flush(&self) -> Result<(), ApiError> {
        let _guard = self.edits.lock().expect("edit lock");
        if self.dirty.swap(false, Ordering::SeqCst) {
            save_map(&self.current().map, &self.dir)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub location: FloorPoint,
    pub direction: Option<Direction>,
    pub instruction: Instruction,
}

pub struct Session {
    pub id: String,
    pub map_id: String,
    pub pinned: Arc<Published>,
    pub destination: Destination,
    pub last: Option<LocalizationResult>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub id: String,
    pub map: String,
    pub status: JobStatus,
    pub error: Option<String>,
    pub report: Option<Arc<EvalReport>>,
}

#[derive(Debug, Clone)]
pub struct StoredResponse {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Bytes,
}

pub enum Claim {
    Fresh,
    InFlight,
    Replay(StoredResponse),
}

const IDEMPOTENCY_CAPACITY: usize = 10_000;

#[derive(Default)]
struct IdempotencyStore {
    entries: HashMap<String, Option<StoredResponse>>,
    order: VecDeque<String>,
}

pub struct Inner {
    pub config: ServiceConfig,
    maps: RwLock<BTreeMap<String, Arc<MapEntry>>>,
    pub sessions: Mutex<HashMap<String, Session>>,
    pub jobs: Mutex<HashMap<String, Job>>,
    idempotency: Mutex<IdempotencyStore>,
    counter: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;
    fn deref(&self) -> &Inner {
        &self.0
    }
}

pub fn valid_map_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl AppState {
    /// Loads every map directory under the map root.
    pub fn open(config: ServiceConfig) -> Result<Self, ApiError> {
        fs::create_dir_all(&config.map_root)
            .map_err(|e| ApiError::internal(format!("{}: {e}", config.map_root.display())))?;
        let mut maps = BTreeMap::new();
        let listing =
            fs::read_dir(&config.map_root).map_err(|e| ApiError::internal(format!("{}: {e}", config.map_root.display())))?;
        for dirent in listing.flatten() {
            let dir = dirent.path();
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
                continue;
            };
            if !valid_map_id(&id) || !dir.join("map.json").exists() {
                continue;
            }
            let map = load_map(&dir)?;
            let world = read_world(&dir)?;
            let entry = MapEntry::new(id.clone(), dir, Published::build(map, config.nav), world);
            tracing::info!(map = %id, "loaded map");
            maps.insert(id, Arc::new(entry));
        }
        Ok(Self(Arc::new(Inner {
            config,
            maps: RwLock::new(maps),
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            idempotency: Mutex::new(IdempotencyStore::default()),
            counter: AtomicU64::new(1),
        })))
    }

    pub fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.counter.fetch_add(1, Ordering::SeqCst))
    }

    pub fn map(&self, id: &str) -> Result<Arc<MapEntry>, ApiError> {
        self.maps
            .read()
            .expect("map registry")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("map", id))
    }

    pub fn maps(&self) -> Vec<Arc<MapEntry>> {
        self.maps.read().expect("map registry").values().cloned().collect()
    }

    /// Registers a new map; fails if the id is taken.
    pub fn insert_map(&self, entry: MapEntry) -> Result<Arc<MapEntry>, ApiError> {
        let mut maps = self.maps.write().expect("map registry");
        if maps.contains_key(&entry.id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "map_exists",
                format!("map {} already exists", entry.id),
            ));
        }
        let entry = Arc::new(entry);
        maps.insert(entry.id.clone(), entry.clone());
        Ok(entry)
    }

    pub fn remove_map(&self, id: &str) {
        self.maps.write().expect("map registry").remove(id);
    }

    /// Early check before an expensive build; [`Self::insert_map`] decides.
    pub fn map_id_free(&self, id: &str) -> bool {
        !self.maps.read().expect("map registry").contains_key(id)
    }

    pub fn flush(&self) -> Result<(), ApiError> {
        for m in self.maps() {
            m.flush()?;
        }
        Ok(())
    }

    pub fn claim(&self, slot: &str) -> Claim {
        let mut store = self.idempotency.lock().expect("idempotency store");
        match store.entries.get(slot) {
            Some(Some(stored)) => Claim::Replay(stored.clone()),
            Some(None) => Claim::InFlight,
            None => {
                store.entries.insert(slot.to_string(), None);
                store.order.push_back(slot.to_string());
                while store.order.len() > IDEMPOTENCY_CAPACITY {
                    if let Some(old) = store.order.pop_front() {
                        store.entries.remove(&old);
                    }
                }
                Claim::Fresh
            }
        }
    }

    pub fn settle(&self, slot: &str, response: Option<StoredResponse>) {
        let mut store = self.idempotency.lock().expect("idempotency store");
        match response {
            Some(r) => {
                if let Some(e) = store.entries.get_mut(slot) {
                    *e = Some(r);
                }
            }
            None => {
                store.entries.remove(slot);
                store.order.retain(|s| s != slot);
            }
        }
    }
}
