use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;
use wayfinder_core::geometry::{Direction, FloorPoint};
use wayfinder_core::map::load_map;
use wayfinder_core::localization::Query;
use wayfinder_core::synthetic::{SurveyPlan, SyntheticWorld, Wall, WorldConfig, FEET_PER_METRE};
use wayfinder_service::payload::encode_query;
use wayfinder_service::{router, AppState, ServiceConfig};

fn small_world() -> WorldConfig {
    WorldConfig {
        width: 8.0,
        depth: 6.0,
        interior: vec![Wall::new(4.0, 0.0, 4.0, 2.5), Wall::new(4.0, 4.0, 4.0, 6.0)],
        ..WorldConfig::default()
    }
}

fn plan() -> SurveyPlan {
    SurveyPlan {
        spacing: 1.0,
        ..SurveyPlan::default()
    }
}

struct Harness {
    app: Router,
    world: SyntheticWorld,
    root: TempDir,
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn harness_with(evolve: bool) -> Harness {
    let root = TempDir::new().unwrap();
    let mut config = ServiceConfig::new(root.path());
    config.evolve = evolve;
    let app = router(AppState::open(config).unwrap());
    let (status, body) = send(
        &app,
        "POST",
        "/v1/maps",
        Some(json!({
            "id": "lab",
            "source": {"kind": "synthetic", "world": small_world(), "survey": plan()}
        })),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    Harness {
        app,
        world: SyntheticWorld::new(small_world()),
        root,
    }
}

async fn harness() -> Harness {
    harness_with(true).await
}

/// Image id of the surveyed image nearest to a world point.
async fn image_near(h: &Harness, x: f64, z: f64) -> (u64, FloorPoint) {
    let (_, images) = send(&h.app, "GET", "/v1/maps/lab/images", None, None).await;
    let target = h.world.to_floor(x, z);
    images
        .as_array()
        .unwrap()
        .iter()
        .map(|i| {
            let p: FloorPoint = serde_json::from_value(i["location"].clone()).unwrap();
            (i["id"].as_u64().unwrap(), p)
        })
        .min_by(|a, b| a.1.distance(&target).total_cmp(&b.1.distance(&target)))
        .unwrap()
}

async fn session_to(h: &Harness, x: f64, z: f64, name: &str) -> String {
    let (image, _) = image_near(h, x, z).await;
    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/destinations",
        Some(json!({"image_id": image, "name": name})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let (s, body) = send(&h.app, "POST", "/v1/sessions", Some(json!({"map": "lab", "destination": name})), None).await;
    assert_eq!(s, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

fn payload(q: &Query) -> Value {
    serde_json::to_value(encode_query(q)).unwrap()
}

#[tokio::test]
async fn health_and_listing() {
    let h = harness().await;
    let (s, body) = send(&h.app, "GET", "/v1/health", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "maps": 1}));
    let (_, maps) = send(&h.app, "GET", "/v1/maps", None, None).await;
    assert_eq!(maps[0]["id"], "lab");
    assert_eq!(maps[0]["synthetic"], true);
    let (s, body) = send(&h.app, "GET", "/v1/maps/nope", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    let (s, body) = send(&h.app, "GET", "/v2/anything", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn created_map_is_persisted_and_reloaded() {
    let h = harness().await;
    let dir = h.root.path().join("lab");
    assert!(dir.join("map.json").exists());
    assert!(dir.join("world.json").exists());
    let disk = load_map(&dir).unwrap();
    let (_, graph) = send(&h.app, "GET", "/v1/maps/lab/graph", None, None).await;
    let mut frames: Vec<u32> = disk.images().iter().map(|i| i.frame_id).collect();
    frames.dedup();
    assert_eq!(graph["nodes"].as_array().unwrap().len(), frames.len());

    let reopened = router(AppState::open(ServiceConfig::new(h.root.path())).unwrap());
    let (_, summary) = send(&reopened, "GET", "/v1/maps/lab", None, None).await;
    assert_eq!(summary["images"].as_u64().unwrap() as usize, disk.len());
    assert_eq!(summary["synthetic"], true);

    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps",
        Some(json!({"id": "lab", "source": {"kind": "synthetic"}})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["code"], "map_exists");
    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps",
        Some(json!({"id": "../etc", "source": {"kind": "synthetic"}})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_id");
}

#[tokio::test]
async fn malformed_json_uses_error_format() {
    let h = harness().await;
    let req = Request::builder()
        .method("POST")
        .uri("/v1/sessions")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(body["code"], "invalid_json");
}

#[tokio::test]
async fn stale_edit_is_rejected() {
    let h = harness().await;
    let (_, m) = send(&h.app, "GET", "/v1/maps/lab", None, None).await;
    let v = m["version"].as_u64().unwrap();
    let wall = json!({"a": {"x": 60.0, "y": 40.0}, "b": {"x": 60.0, "y": 50.0}});
    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/boundaries",
        Some(json!({"expected_version": v, "add": [wall]})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["version"].as_u64().unwrap(), v + 1);
    assert_eq!(body["added"][0]["source"], "manual");
    let added = body["added"][0]["id"].as_u64().unwrap();

    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/boundaries",
        Some(json!({"expected_version": v, "delete": [added]})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["code"], "version_conflict");
    let (_, m) = send(&h.app, "GET", "/v1/maps/lab", None, None).await;
    assert_eq!(m["version"].as_u64().unwrap(), v + 1);

    let (s, body) = send(&h.app, "POST", "/v1/maps/lab/boundaries", Some(json!({"delete": [99999]})), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{body}");
}

#[tokio::test]
async fn boundary_edit_updates_graph() {
    let h = harness().await;
    let (_, before) = send(&h.app, "GET", "/v1/maps/lab/graph", None, None).await;
    let edges_before = before["edges"].as_array().unwrap().len();
    // Close the doorway.
    let a = h.world.to_floor(4.0, 2.4);
    let b = h.world.to_floor(4.0, 4.1);
    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/boundaries",
        Some(json!({"add": [{"a": a, "b": b}]})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let (_, after) = send(&h.app, "GET", "/v1/maps/lab/graph", None, None).await;
    assert_eq!(after["version"], body["version"]);
    assert!(after["edges"].as_array().unwrap().len() < edges_before);
}

#[tokio::test]
async fn align_recovers_the_survey_transform() {
    let h = harness().await;
    let (_, images) = send(&h.app, "GET", "/v1/maps/lab/images", None, None).await;
    let images = images.as_array().unwrap();
    let picks = [&images[0], &images[images.len() / 2], &images[images.len() - 1]];
    let correspondences: Vec<Value> = picks
        .iter()
        .map(|i| json!({"map": i["position"], "floor": i["location"]}))
        .collect();
    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/align",
        Some(json!({"correspondences": correspondences})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert!(body["rms"].as_f64().unwrap() < 1e-6);
    let rows: [[f64; 3]; 2] = serde_json::from_value(body["transform"].clone()).unwrap();
    let expected = h.world.transform().rows();
    for (r, e) in rows.iter().flatten().zip(expected.iter().flatten()) {
        assert!((r - e).abs() < 1e-6, "{rows:?} vs {expected:?}");
    }
    let (_, m) = send(&h.app, "GET", "/v1/maps/lab", None, None).await;
    assert_eq!(m["version"], body["version"]);

    let (s, body) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/align",
        Some(json!({"correspondences": &correspondences[..2]})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_alignment");
}

#[tokio::test]
async fn query_at_destination_arrives() {
    let h = harness().await;
    let dir = h.root.path().join("lab");
    let map = load_map(&dir).unwrap();
    let sid = session_to(&h, 6.0, 1.5, "window").await;
    let (image, _) = image_near(&h, 6.0, 1.5).await;
    let img = map.image(image as u32).unwrap();
    // The reference image itself is an exact match.
    let q = Query {
        global: img.global.0.clone(),
        locals: img.locals.clone(),
    };
    let (s, body) = send(&h.app, "POST", &format!("/v1/sessions/{sid}/query"), Some(payload(&q)), None).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["instruction"]["kind"], "arrived");
    assert_eq!(body["instruction"]["distance"].as_f64().unwrap(), 0.0);
    let loc: FloorPoint = serde_json::from_value(body["location"].clone()).unwrap();
    assert_eq!(loc, img.location);

    let (_, session) = send(&h.app, "GET", &format!("/v1/sessions/{sid}"), None, None).await;
    assert_eq!(session["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn bad_queries_are_rejected() {
    let h = harness().await;
    let sid = session_to(&h, 6.0, 1.5, "window").await;
    let uri = format!("/v1/sessions/{sid}/query");
    let q = h.world.query(h.world.to_floor(2.0, 2.0), Direction::new(0.0)).unwrap();

    let mut short = payload(&q);
    short["global"]["dim"] = json!(3);
    let (s, body) = send(&h.app, "POST", &uri, Some(short), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_payload");

    // No local features: retrieval works but nothing can be verified.
    let empty = Query {
        global: q.global.clone(),
        locals: Vec::new(),
    };
    let (s, body) = send(&h.app, "POST", &uri, Some(payload(&empty)), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["code"], "localization_failed");
    assert!(body["message"].as_str().unwrap().contains("take another image"));

    let (s, _) = send(&h.app, "POST", "/v1/sessions/s-404/query", Some(payload(&q)), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, body) = send(&h.app, "POST", "/v1/sessions", Some(json!({"map": "lab", "destination": "nowhere"})), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{body}");
}

#[tokio::test]
async fn idempotent_posts_replay() {
    let h = harness().await;
    let (image, _) = image_near(&h, 1.0, 1.0).await;
    let body = json!({"image_id": image, "name": "desk"});
    let (s1, b1) = send(&h.app, "POST", "/v1/maps/lab/destinations", Some(body.clone()), Some("k1")).await;
    let (s2, b2) = send(&h.app, "POST", "/v1/maps/lab/destinations", Some(body.clone()), Some("k1")).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!((s1, &b1), (s2, &b2));
    // Without the key the duplicate name is an error.
    let (s3, b3) = send(&h.app, "POST", "/v1/maps/lab/destinations", Some(body), None).await;
    assert_eq!(s3, StatusCode::CONFLICT);
    assert_eq!(b3["code"], "duplicate_name");
    let (_, m) = send(&h.app, "GET", "/v1/maps/lab", None, None).await;
    assert_eq!(m["version"], b1["version"]);

    let (s1, b1) = send(&h.app, "POST", "/v1/sessions", Some(json!({"map": "lab", "destination": "desk"})), Some("k2")).await;
    let (s2, b2) = send(&h.app, "POST", "/v1/sessions", Some(json!({"map": "lab", "destination": "desk"})), Some("k2")).await;
    assert_eq!(s1, StatusCode::CREATED);
    assert_eq!((s1, b1), (s2, b2));
}

#[tokio::test]
async fn sessions_stay_pinned_to_their_version() {
    let h = harness().await;
    let sid = session_to(&h, 6.0, 1.5, "window").await;
    let (_, s0) = send(&h.app, "GET", &format!("/v1/sessions/{sid}"), None, None).await;
    let pinned = s0["map_version"].as_u64().unwrap();
    let (s, _) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/boundaries",
        Some(json!({"add": [{"a": h.world.to_floor(1.0, 5.0), "b": h.world.to_floor(2.0, 5.0)}]})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let q = h.world.query(h.world.to_floor(2.0, 1.5), Direction::new(0.0)).unwrap();
    let (s, body) = send(&h.app, "POST", &format!("/v1/sessions/{sid}/query"), Some(payload(&q)), None).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["map_version"].as_u64().unwrap(), pinned);

    let (_, fresh) = send(&h.app, "POST", "/v1/sessions", Some(json!({"map": "lab", "destination": "window"})), None).await;
    assert!(fresh["map_version"].as_u64().unwrap() > pinned);
}

#[tokio::test]
async fn queries_do_not_depend_on_session_history() {
    let h = harness_with(false).await;
    let a = session_to(&h, 6.0, 1.5, "window").await;
    let (_, b) = send(&h.app, "POST", "/v1/sessions", Some(json!({"map": "lab", "destination": "window"})), None).await;
    let b = b["id"].as_str().unwrap().to_string();
    let probe = h.world.query(h.world.to_floor(2.5, 1.5), Direction::new(0.0)).unwrap();
    // Session a sees other queries first.
    for (x, z) in [(2.0, 1.0), (6.5, 4.5)] {
        let q = h.world.query(h.world.to_floor(x, z), Direction::new(45.0)).unwrap();
        send(&h.app, "POST", &format!("/v1/sessions/{a}/query"), Some(payload(&q)), None).await;
    }
    let (sa, mut ra) = send(&h.app, "POST", &format!("/v1/sessions/{a}/query"), Some(payload(&probe)), None).await;
    let (sb, mut rb) = send(&h.app, "POST", &format!("/v1/sessions/{b}/query"), Some(payload(&probe)), None).await;
    assert_eq!(sa, StatusCode::OK, "{ra}");
    assert_eq!(sa, sb);
    ra["session"] = Value::Null;
    rb["session"] = Value::Null;
    assert_eq!(ra, rb);
}

#[tokio::test]
async fn sweep_job_completes() {
    let h = harness().await;
    let (s, job) = send(
        &h.app,
        "POST",
        "/v1/maps/lab/sweeps",
        Some(json!({"alphas": [1, 2], "betas": [1, 3], "points": 4})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    let id = job["id"].as_str().unwrap();
    let mut done = Value::Null;
    for _ in 0..600 {
        let (_, j) = send(&h.app, "GET", &format!("/v1/jobs/{id}"), None, None).await;
        if j["status"] == "done" || j["status"] == "failed" {
            done = j;
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert_eq!(done["status"], "done", "{done}");
    let report = &done["report"];
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    assert_eq!(report["points"].as_array().unwrap().len(), 4);

    let (s, body) = send(&h.app, "POST", "/v1/maps/lab/sweeps", Some(json!({"alphas": [0]})), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_sweep");
}

#[tokio::test]
async fn scripted_walk_makes_progress() {
    let h = harness().await;
    let sid = session_to(&h, 6.5, 5.0, "corner").await;
    let uri = format!("/v1/sessions/{sid}/query");
    let (mut x, mut z) = (1.0, 1.0);
    let mut heading = Direction::new(30.0);
    let mut remaining = Vec::new();
    let mut arrived = false;
    for _ in 0..20 {
        let q = h.world.query(h.world.to_floor(x, z), heading).unwrap();
        let (s, body) = send(&h.app, "POST", &uri, Some(payload(&q)), None).await;
        if s != StatusCode::OK {
            heading = Direction::new(heading.degrees() + 90.0);
            continue;
        }
        let ins = &body["instruction"];
        if ins["kind"] == "arrived" {
            arrived = true;
            break;
        }
        remaining.push(ins["remaining"].as_f64().unwrap() + ins["distance"].as_f64().unwrap());
        // Face the instructed bearing and walk up to the stated distance.
        let bearing: Direction = serde_json::from_value(ins["bearing"].clone()).unwrap();
        let step = (ins["distance"].as_f64().unwrap() / FEET_PER_METRE).min(1.5);
        let yaw = h.world.world_yaw(bearing);
        let (nx, nz) = (x + step * yaw.cos(), z + step * yaw.sin());
        if h.world.line_of_sight([x, z], [nx, nz]) && h.world.wall_clearance(nx, nz) > 0.2 {
            (x, z) = (nx, nz);
        }
        heading = serde_json::from_value(ins["bearing"].clone()).unwrap();
    }
    assert!(arrived, "remaining {remaining:?}");
    let steps = remaining.len().saturating_sub(1);
    let shrinking = remaining.windows(2).filter(|w| w[1] <= w[0] + 0.5 * FEET_PER_METRE).count();
    assert!(steps == 0 || shrinking * 10 >= steps * 9, "remaining {remaining:?}");
}
