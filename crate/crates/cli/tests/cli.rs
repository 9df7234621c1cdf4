use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use tempfile::TempDir;
use wayfinder_core::map::load_map;
use wayfinder_core::synthetic::{SyntheticWorld, Wall, WorldConfig};

fn wayfinder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wayfinder"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = wayfinder(args);
    assert!(o.status.success(), "{args:?}\n{}\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

fn small_world() -> WorldConfig {
    WorldConfig {
        width: 8.0,
        depth: 6.0,
        interior: vec![Wall::new(4.0, 0.0, 4.0, 2.5), Wall::new(4.0, 4.0, 4.0, 6.0)],
        ..WorldConfig::default()
    }
}

/// Builds the small synthetic map; returns (tempdir, map dir, world).
fn built() -> (TempDir, String, SyntheticWorld) {
    let tmp = TempDir::new().unwrap();
    let world_path = tmp.path().join("world.json");
    std::fs::write(&world_path, serde_json::to_string(&small_world()).unwrap()).unwrap();
    let out = tmp.path().join("lab");
    let exported = tmp.path().join("export");
    ok(&[
        "map",
        "build",
        "--synthetic",
        "--world",
        world_path.to_str().unwrap(),
        "--spacing",
        "1.0",
        "--out",
        out.to_str().unwrap(),
        "--export-survey",
        exported.to_str().unwrap(),
    ]);
    let dir = out.to_str().unwrap().to_string();
    (tmp, dir, SyntheticWorld::new(small_world()))
}

fn image_near(dir: &str, world: &SyntheticWorld, x: f64, z: f64) -> u32 {
    let map = load_map(Path::new(dir)).unwrap();
    let target = world.to_floor(x, z);
    map.images()
        .iter()
        .min_by(|a, b| a.location.distance(&target).total_cmp(&b.location.distance(&target)))
        .unwrap()
        .id
}

#[test]
fn survey_export_rebuilds_the_synthetic_map() {
    let (tmp, dir, world) = built();
    let synthetic = load_map(Path::new(&dir)).unwrap();
    let export = tmp.path().join("export");
    let rebuilt = tmp.path().join("rebuilt");
    let t = world.transform().rows();
    let transform = format!("{},{},{},{},{},{}", t[0][0], t[0][1], t[0][2], t[1][0], t[1][1], t[1][2]);
    let scale = world.scale().to_string();
    ok(&[
        "map",
        "build",
        "--survey",
        export.join("survey.json").to_str().unwrap(),
        "--descriptors",
        export.join("descriptors.json").to_str().unwrap(),
        "--transform",
        &transform,
        "--scale",
        &scale,
        "--name",
        "lab",
        "--out",
        rebuilt.to_str().unwrap(),
    ]);
    let map = load_map(&rebuilt).unwrap();
    assert_eq!(map.images(), synthetic.images());
    assert_eq!(map.landmarks(), synthetic.landmarks());
    assert_eq!(map.name(), "lab");
}

#[test]
fn localize_self_query_prints_exact_location() {
    let (_tmp, dir, world) = built();
    let id = image_near(&dir, &world, 6.0, 1.5);
    let map = load_map(Path::new(&dir)).unwrap();
    let loc = map.image(id).unwrap().location;
    let out = ok(&["localize", "--map", &dir, "--image", &id.to_string()]);
    assert!(out.contains(&format!("location {} {}", loc.x, loc.y)), "{out}");

    let at = world.to_floor(2.0, 1.5);
    let out = ok(&["localize", "--map", &dir, "--at", &format!("{},{}", at.x, at.y), "--heading", "0"]);
    assert!(out.starts_with("location "), "{out}");

    let o = wayfinder(&["localize", "--map", &dir, "--image", "999999"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("error[not_found]"));
}

#[test]
fn editing_commands() {
    let (_tmp, dir, world) = built();
    let id = image_near(&dir, &world, 6.5, 5.0);
    ok(&["map", "destinations", "--map", &dir, "--image-id", &id.to_string(), "--name", "corner"]);
    assert!(ok(&["map", "destinations", "--map", &dir]).contains("corner"));
    let o = wayfinder(&["map", "destinations", "--map", &dir, "--image-id", &id.to_string(), "--name", "corner"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("error[duplicate_name]"));

    let v = load_map(Path::new(&dir)).unwrap().version();
    let out = ok(&[
        "map",
        "boundaries",
        "--map",
        &dir,
        "--add",
        "50,40,60,40",
        "--expected-version",
        &v.to_string(),
    ]);
    assert!(out.contains("added 1"), "{out}");
    let o = wayfinder(&["map", "boundaries", "--map", &dir, "--delete", "0", "--expected-version", &v.to_string()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("error[version_conflict]"));

    let map = load_map(Path::new(&dir)).unwrap();
    let pairs: Vec<String> = [0, map.len() / 2, map.len() - 1]
        .iter()
        .map(|&i| {
            let img = &map.images()[i];
            format!(
                "{},{},{}:{},{}",
                img.position.x, img.position.y, img.position.z, img.location.x, img.location.y
            )
        })
        .collect();
    let mut args = vec!["map", "align", "--map", dir.as_str()];
    for p in &pairs {
        args.extend(["--pair", p.as_str()]);
    }
    let out = ok(&args);
    assert!(out.contains("residual 2:"), "{out}");
    let rms: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("rms "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(rms < 1e-3, "{out}");
}

#[test]
fn simulated_navigation_arrives() {
    let (_tmp, dir, world) = built();
    let id = image_near(&dir, &world, 6.5, 5.0);
    ok(&["map", "destinations", "--map", &dir, "--image-id", &id.to_string(), "--name", "corner"]);
    let start = world.to_floor(1.0, 1.0);
    let out = ok(&[
        "navigate",
        "--sim",
        "--map",
        &dir,
        "--destination",
        "corner",
        "--start",
        &format!("{},{}", start.x, start.y),
        "--heading",
        "30",
        "--trace",
        "--period",
        "0.001",
    ]);
    assert!(out.contains("arrived after"), "{out}");

    let o = wayfinder(&["navigate", "--map", &dir, "--destination", "corner"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wayfinder(&["navigate", "--sim", "--map", &dir, "--destination", "nowhere"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn fixture_tables_reproduce_expected_probabilities() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["eval", "fixture", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.contains("frame_density: p = 0.72"), "{out}");
    assert!(out.contains("direction_density: p = 0.65"), "{out}");
    assert!(tmp.path().join("direction_error.csv").exists());
}

#[test]
fn sweep_writes_report() {
    let (tmp, dir, _) = built();
    let out_dir = tmp.path().join("report");
    let out = ok(&[
        "eval",
        "sweep",
        "--map",
        &dir,
        "--alpha",
        "1,2",
        "--beta",
        "1..2",
        "--points",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.contains("n/1: mean location error"), "{out}");
    for f in ["frame_density.csv", "direction_density.csv", "direction_error.csv", "report.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out_dir.join("frame_density.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = wayfinder(&["eval", "sweep", "--map", &dir, "--alpha", "0", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error[invalid_argument]"));
}

fn health(port: u16) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    s.write_all(b"GET /v1/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_health() {
    let (tmp, _dir, _) = built();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wayfinder"))
        .arg("serve")
        .env("WAYFINDER_BIND", format!("127.0.0.1:{port}"))
        .env("WAYFINDER_MAP_ROOT", tmp.path())
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = health(port) {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let _ = child.kill();
    let _ = child.wait();
    let reply = reply.expect("server came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains(r#""maps":1"#), "{reply}");
}

#[test]
fn bad_arguments_exit_with_usage_status() {
    assert_eq!(wayfinder(&["map", "build"]).status.code(), Some(2));
    let o = wayfinder(&["map", "align", "--map", "/nonexistent", "--pair", "1,2:3"]);
    assert_ne!(o.status.code(), Some(0));
}
