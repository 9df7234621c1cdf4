use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wayfinder_core::descriptors::{GlobalDescriptor, MutualNearestNeighbor};
use wayfinder_core::evaluation::{run_sweep, synthetic_test_points, EvalReport, SweepConfig};
use wayfinder_core::geometry::{estimate_floor_transform, Alignment, Direction, FloorPoint, FloorTransform, MapPoint3};
use wayfinder_core::localization::{localize, LocalizationResult, Method};
use wayfinder_core::map::{
    load_map, save_map, Boundary, BoundarySource, Destination, ImageId, Landmark, NewBoundary, ReferenceImage,
};
use wayfinder_core::navigation::{Instruction, NavNode};
use wayfinder_core::synthetic::{SurveyPlan, SyntheticWorld, WorldConfig};

use crate::error::ApiError;
use crate::payload::{decode_query, QueryPayload};
use crate::state::{
    valid_map_id, write_world, AppState, HistoryEntry, Job, JobStatus, MapEntry, Published, Session, WorldFile,
};

/// JSON body extractor whose rejections use the API error format.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(ApiError::new(r.status(), "invalid_json", r.body_text())),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub maps: usize,
}

pub async fn health(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        maps: st.maps().len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSummary {
    pub id: String,
    pub name: String,
    pub version: u64,
    /// Feet per floor-plan pixel.
    pub scale: f64,
    pub transform: [[f64; 3]; 2],
    pub floor_plan: Option<String>,
    pub images: usize,
    pub landmarks: usize,
    pub boundaries: Vec<Boundary>,
    pub destinations: Vec<Destination>,
    /// Ground truth is available for sweeps and simulation.
    pub synthetic: bool,
}

fn summary(entry: &MapEntry) -> MapSummary {
    let p = entry.current();
    let map = &p.map;
    MapSummary {
        id: entry.id.clone(),
        name: map.name().to_string(),
        version: map.version(),
        scale: map.scale(),
        transform: map.transform().rows(),
        floor_plan: map.header().floor_plan.clone(),
        images: map.len(),
        landmarks: map.landmarks().len(),
        boundaries: map.boundaries().to_vec(),
        destinations: map.destinations().to_vec(),
        synthetic: entry.world.is_some(),
    }
}

pub async fn list_maps(State(st): State<AppState>) -> Json<Vec<MapSummary>> {
    Json(st.maps().iter().map(|m| summary(m)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSource {
    /// Import a map directory written by `save_map`.
    Directory { path: PathBuf },
    /// Survey a synthetic world.
    Synthetic {
        #[serde(default)]
        world: WorldConfig,
        #[serde(default)]
        survey: SurveyPlan,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateMap {
    pub id: String,
    pub source: MapSource,
}

pub async fn create_map(State(st): State<AppState>, ApiJson(req): ApiJson<CreateMap>) -> Result<Response, ApiError> {
    if !valid_map_id(&req.id) {
        return Err(ApiError::bad_request(
            "invalid_id",
            "map ids use 1 to 64 letters, digits, '-' or '_'",
        ));
    }
    if !st.map_id_free(&req.id) {
        return Err(ApiError::new(StatusCode::CONFLICT, "map_exists", format!("map {} already exists", req.id)));
    }
    let dir = st.config.map_root.join(&req.id);
    let nav = st.config.nav;
    let id = req.id.clone();
    let (map, world) = blocking(move || match req.source {
        MapSource::Directory { path } => Ok((load_map(&path)?, None)),
        MapSource::Synthetic { world, survey } => {
            let w = SyntheticWorld::new(world.clone());
            let (map, _, _) = w.build_map(&survey)?;
            Ok((map, Some(WorldFile { world, survey })))
        }
    })
    .await?;
    let entry = st.insert_map(MapEntry::new(id, dir.clone(), Published::build(map, nav), world.clone()))?;
    let saved = entry.clone();
    let persisted = blocking(move || {
        save_map(&saved.current().map, &dir)?;
        if let Some(w) = &world {
            write_world(&dir, w)?;
        }
        Ok(())
    })
    .await;
    if let Err(e) = persisted {
        st.remove_map(&entry.id);
        return Err(e);
    }
    Ok((StatusCode::CREATED, Json(summary(&entry))).into_response())
}

pub async fn get_map(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<MapSummary>, ApiError> {
    Ok(Json(summary(&*st.map(&id)?)))
}

pub async fn map_images(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<ReferenceImage>>, ApiError> {
    let p = st.map(&id)?.current();
    Ok(Json(p.map.images().iter().map(|i| (**i).clone()).collect()))
}

pub async fn map_landmarks(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<Landmark>>, ApiError> {
    Ok(Json(st.map(&id)?.current().map.landmarks().to_vec()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphView {
    pub version: u64,
    pub nodes: Vec<NavNode>,
    /// `(node, node, feet)`.
    pub edges: Vec<(ImageId, ImageId, f64)>,
}

pub async fn map_graph(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<GraphView>, ApiError> {
    let p = st.map(&id)?.current();
    Ok(Json(GraphView {
        version: p.graph.version(),
        nodes: p.graph.nodes().to_vec(),
        edges: p.graph.edges(),
    }))
}

fn manual() -> BoundarySource {
    BoundarySource::Manual
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryInput {
    pub a: FloorPoint,
    pub b: FloorPoint,
    #[serde(default = "manual")]
    pub source: BoundarySource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryEdit {
    pub expected_version: Option<u64>,
    #[serde(default)]
    pub add: Vec<BoundaryInput>,
    #[serde(default)]
    pub delete: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryEditResult {
    pub version: u64,
    pub added: Vec<Boundary>,
    pub removed: Vec<Boundary>,
}

pub async fn edit_boundaries(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<BoundaryEdit>,
) -> Result<Json<BoundaryEditResult>, ApiError> {
    let entry = st.map(&id)?;
    let nav = st.config.nav;
    let (delta, published) = blocking(move || {
        entry.mutate(nav, req.expected_version, true, |map| {
            let adds: Vec<NewBoundary> = req
                .add
                .iter()
                .map(|b| NewBoundary {
                    a: b.a,
                    b: b.b,
                    source: b.source,
                })
                .collect();
            let delta = map.edit_boundaries(&adds, &req.delete)?;
            Ok((delta.clone(), Some(delta)))
        })
    })
    .await?;
    Ok(Json(BoundaryEditResult {
        version: published.map.version(),
        added: delta.added,
        removed: delta.removed,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DestinationInput {
    pub expected_version: Option<u64>,
    pub image_id: ImageId,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DestinationResult {
    pub version: u64,
    pub destination: Destination,
}

pub async fn define_destination(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<DestinationInput>,
) -> Result<Json<DestinationResult>, ApiError> {
    let entry = st.map(&id)?;
    let nav = st.config.nav;
    let name = req.name.clone();
    let (version, _) = blocking(move || {
        entry.mutate(nav, req.expected_version, true, |map| {
            Ok((map.define_destination(req.image_id, &name)?, None))
        })
    })
    .await?;
    Ok(Json(DestinationResult {
        version,
        destination: Destination {
            name: req.name,
            image_id: req.image_id,
        },
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Correspondence {
    /// Point in the reconstruction frame.
    pub map: MapPoint3,
    /// Matching floor-plan pixel.
    pub floor: FloorPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignRequest {
    pub expected_version: Option<u64>,
    pub correspondences: Vec<Correspondence>,
    /// Re-project the map with the new transform; otherwise only report it.
    #[serde(default)]
    pub commit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignResult {
    pub transform: [[f64; 3]; 2],
    pub residuals: Vec<f64>,
    pub rms: f64,
    pub version: u64,
}

pub async fn align(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<AlignRequest>,
) -> Result<Json<AlignResult>, ApiError> {
    let entry = st.map(&id)?;
    let pairs: Vec<(MapPoint3, FloorPoint)> = req.correspondences.iter().map(|c| (c.map, c.floor)).collect();
    let Alignment {
        transform,
        residuals,
        rms,
    } = estimate_floor_transform(&pairs).map_err(|e| ApiError::bad_request("invalid_alignment", e.to_string()))?;
    let version = if req.commit {
        let nav = st.config.nav;
        let (_, p) = blocking(move || {
            entry.mutate(nav, req.expected_version, true, |map| {
                map.realign(transform);
                Ok(((), None))
            })
        })
        .await?;
        p.map.version()
    } else {
        let current = entry.current().map.version();
        if let Some(v) = req.expected_version.filter(|&v| v != current) {
            return Err(ApiError::version_conflict(v, current));
        }
        current
    };
    Ok(Json(AlignResult {
        transform: FloorTransform::rows(&transform),
        residuals,
        rms,
        version,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub map: String,
    /// Destination name.
    pub destination: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub map: String,
    pub map_version: u64,
    pub destination: Destination,
    pub last: Option<LocalizationResult>,
    pub history: Vec<HistoryEntry>,
}

fn session_view(s: &Session) -> SessionView {
    SessionView {
        id: s.id.clone(),
        map: s.map_id.clone(),
        map_version: s.pinned.map.version(),
        destination: s.destination.clone(),
        last: s.last.clone(),
        history: s.history.clone(),
    }
}

pub async fn create_session(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<CreateSession>,
) -> Result<Response, ApiError> {
    let entry = st.map(&req.map)?;
    let pinned = entry.current();
    let destination = pinned
        .map
        .destination(&req.destination)
        .cloned()
        .ok_or_else(|| ApiError::not_found("destination", &req.destination))?;
    let session = Session {
        id: st.next_id("s"),
        map_id: entry.id.clone(),
        pinned,
        destination,
        last: None,
        history: Vec::new(),
    };
    let view = session_view(&session);
    st.sessions.lock().expect("sessions").insert(session.id.clone(), session);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

pub async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let sessions = st.sessions.lock().expect("sessions");
    let s = sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    Ok(Json(session_view(s)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub session: String,
    /// Version the session is pinned to.
    pub map_version: u64,
    pub location: FloorPoint,
    pub direction: Option<Direction>,
    pub method: Method,
    pub k_used: usize,
    pub survivors: usize,
    pub pnp_inliers: usize,
    pub instruction: Instruction,
}

pub async fn query(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(payload): ApiJson<QueryPayload>,
) -> Result<Json<QueryResponse>, ApiError> {
    let (pinned, destination, map_id) = {
        let sessions = st.sessions.lock().expect("sessions");
        let s = sessions.get(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
        (s.pinned.clone(), s.destination.clone(), s.map_id.clone())
    };
    let cfg = st.config.localization;
    let (query, result, instruction) = blocking(move || {
        let header = pinned.map.header();
        let query = decode_query(&payload, header.global_dim, header.local_dim)?;
        let result = localize(&query, &pinned.map, &cfg, &MutualNearestNeighbor::default())?;
        let instruction = pinned.graph.guide(&result, &destination)?;
        Ok((query, result, instruction))
    })
    .await?;

    let response = {
        let mut sessions = st.sessions.lock().expect("sessions");
        let s = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
        s.history.push(HistoryEntry {
            location: result.location,
            direction: result.direction,
            instruction: instruction.clone(),
        });
        s.last = Some(result.clone());
        QueryResponse {
            session: id.clone(),
            map_version: s.pinned.map.version(),
            location: result.location,
            direction: result.direction,
            method: result.method,
            k_used: result.k_used,
            survivors: result.survivors,
            pnp_inliers: result.pnp_inliers,
            instruction,
        }
    };

    let exact = result.candidates.first().is_some_and(|c| c.distance == 0.0);
    if st.config.evolve && !exact && st.config.gate.admits(&result) {
        if let Ok(entry) = st.map(&map_id) {
            let (nav, gate) = (st.config.nav, st.config.gate);
            let evolved = blocking(move || {
                entry.mutate(nav, None, false, |map| {
                    let global = GlobalDescriptor(query.global);
                    Ok((map.evolve(&global, &query.locals, &result, &gate)?, None))
                })
            })
            .await;
            match evolved {
                Ok((Some(image), p)) => tracing::debug!(map = %map_id, image, version = p.map.version(), "evolved"),
                Ok((None, _)) => {}
                Err(e) => tracing::warn!(map = %map_id, error = %e, "evolution failed"),
            }
        }
    }
    Ok(Json(response))
}

fn default_points() -> usize {
    17
}

fn default_clearance() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    2024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    #[serde(default)]
    pub alphas: Option<Vec<usize>>,
    #[serde(default)]
    pub betas: Option<Vec<usize>>,
    /// Test points drawn from the synthetic world.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Metres of wall clearance around test points.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub map: String,
    pub status: JobStatus,
    pub error: Option<String>,
    pub report: Option<EvalReport>,
}

fn job_view(j: &Job) -> JobView {
    JobView {
        id: j.id.clone(),
        map: j.map.clone(),
        status: j.status,
        error: j.error.clone(),
        report: j.report.as_deref().cloned(),
    }
}

fn set_job(st: &AppState, id: &str, f: impl FnOnce(&mut Job)) {
    if let Some(j) = st.jobs.lock().expect("jobs").get_mut(id) {
        f(j);
    }
}

pub async fn start_sweep(
    State(st): State<AppState>,
    Path(map_id): Path<String>,
    ApiJson(req): ApiJson<SweepRequest>,
) -> Result<Response, ApiError> {
    let entry = st.map(&map_id)?;
    let Some(world) = entry.world.clone() else {
        return Err(ApiError::bad_request(
            "no_ground_truth",
            format!("map {map_id} has no synthetic world to draw test points from"),
        ));
    };
    let defaults = SweepConfig::default();
    let sweep = SweepConfig {
        alphas: req.alphas.unwrap_or(defaults.alphas),
        betas: req.betas.unwrap_or(defaults.betas),
    };
    if sweep.alphas.is_empty() || sweep.betas.is_empty() || sweep.alphas.iter().chain(&sweep.betas).any(|&r| r == 0) {
        return Err(ApiError::bad_request("invalid_sweep", "rates must be non-empty and positive"));
    }
    if req.points == 0 {
        return Err(ApiError::bad_request("invalid_sweep", "at least one test point is needed"));
    }
    let job = Job {
        id: st.next_id("j"),
        map: map_id,
        status: JobStatus::Queued,
        error: None,
        report: None,
    };
    let view = job_view(&job);
    let job_id = job.id.clone();
    st.jobs.lock().expect("jobs").insert(job.id.clone(), job);

    let map = entry.current().map.clone();
    let cfg = st.config.localization;
    let state = st.clone();
    tokio::spawn(async move {
        set_job(&state, &job_id, |j| j.status = JobStatus::Running);
        let outcome = tokio::task::spawn_blocking(move || {
            let cases = synthetic_test_points(&world.0, req.points, req.clearance, req.seed);
            run_sweep(&map, &cases, &sweep, &cfg, &MutualNearestNeighbor::default())
        })
        .await;
        set_job(&state, &job_id, |j| match outcome {
            Ok(Ok(report)) => {
                j.status = JobStatus::Done;
                j.report = Some(Arc::new(report));
            }
            Ok(Err(e)) => {
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(format!("worker failed: {e}"));
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(view)).into_response())
}

pub async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let jobs = st.jobs.lock().expect("jobs");
    let j = jobs.get(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    Ok(Json(job_view(j)))
}

pub async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}
