//! The `wayfinder` command line: map building and editing, offline
//! localization and navigation, evaluation sweeps and the HTTP service.

pub mod args;

use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wayfinder_core::descriptor_io::{ingest_descriptor_files, write_descriptor_files, IngestError};
use wayfinder_core::descriptors::MutualNearestNeighbor;
use wayfinder_core::evaluation::{fixtures, order_probability, run_sweep, synthetic_test_points, SweepConfig};
use wayfinder_core::geometry::{estimate_floor_transform, Direction, FloorPoint, FloorTransform, MapPoint3};
use wayfinder_core::localization::{localize, LocalizationConfig, Query};
use wayfinder_core::map::{
    build_reference_database, extract_boundaries, load_map, parse_survey_json, save_map, BoundarySource, MapHeader,
    NewBoundary, Raster, TopometricMap,
};
use wayfinder_core::navigation::{Instruction, NavConfig, NavGraph};
use wayfinder_core::simulation::{simulate, SimConfig};
use wayfinder_core::synthetic::{SurveyPlan, SyntheticWorld, WorldConfig};
use wayfinder_service::state::{read_world, write_world, WorldFile};
use wayfinder_service::{ApiError, ServiceConfig};

use crate::args::{parse_correspondence, parse_floor_point, parse_rates, parse_segment, parse_transform};

/// Bind address used by `serve` when neither flag nor environment sets one.
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "wayfinder", version, about = "Topometric maps, visual localization and navigation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and edit maps.
    #[command(subcommand)]
    Map(MapCommand),
    /// Localize one query against a map.
    Localize(LocalizeArgs),
    /// Guide a simulated walker to a destination.
    Navigate(NavigateArgs),
    /// Evaluate localization accuracy.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum MapCommand {
    Build(BuildArgs),
    /// Fit the reconstruction-to-floor-plan transform.
    Align(AlignArgs),
    /// Add, delete or extract boundaries.
    Boundaries(BoundaryArgs),
    /// List or name destinations.
    Destinations(DestinationArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Localize synthetic test points over a grid of sampling rates.
    Sweep(SweepArgs),
    /// Order probabilities of the tables shipped with the library.
    Fixture(FixtureArgs),
}

/// Build a map from a synthetic world or from a survey export.
#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Output map directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Survey the built-in synthetic world.
    #[arg(long, conflicts_with_all = ["survey", "descriptors"])]
    pub synthetic: bool,
    /// World config JSON for --synthetic; defaults to the built-in world.
    #[arg(long, requires = "synthetic")]
    pub world: Option<PathBuf>,
    /// Metres between synthetic survey frames.
    #[arg(long, requires = "synthetic")]
    pub spacing: Option<f64>,
    /// Also write the synthetic survey as survey.json plus descriptor files here.
    #[arg(long, requires = "synthetic")]
    pub export_survey: Option<PathBuf>,
    /// Survey poses and landmarks (wayfinder-survey JSON).
    #[arg(long, requires = "descriptors")]
    pub survey: Option<PathBuf>,
    /// Descriptor manifest with one record per slice.
    #[arg(long, requires = "survey")]
    pub descriptors: Option<PathBuf>,
    /// Floor transform rows `a,b,c,d,e,f`; identity when omitted.
    #[arg(long)]
    pub transform: Option<String>,
    /// Feet per floor-plan pixel.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value = "map")]
    pub name: String,
    /// Slices per frame.
    #[arg(long, default_value_t = 18)]
    pub m: usize,
    /// Degrees between slices.
    #[arg(long, default_value_t = 20.0)]
    pub theta: f64,
    /// Slices with fewer keypoints are dropped.
    #[arg(long, default_value_t = 100)]
    pub min_features: usize,
    /// Grayscale floor plan PNG, copied into the map.
    #[arg(long)]
    pub floor_plan: Option<PathBuf>,
    /// Extract boundaries from the floor plan, keeping runs of at least this many pixels.
    #[arg(long, requires = "floor_plan")]
    pub extract_boundaries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// `x,y,z:u,v`; at least three.
    #[arg(long = "pair", required = true)]
    pub pairs: Vec<String>,
    /// Re-project the map with the fitted transform.
    #[arg(long)]
    pub commit: bool,
    #[arg(long)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Segment `x1,y1,x2,y2` in floor-plan pixels.
    #[arg(long = "add")]
    pub add: Vec<String>,
    /// Boundary id.
    #[arg(long = "delete")]
    pub delete: Vec<u32>,
    /// Add boundaries extracted from the map's floor plan, keeping runs of at least this many pixels.
    #[arg(long)]
    pub extract: Option<usize>,
    #[arg(long)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DestinationArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, requires = "name")]
    pub image_id: Option<u32>,
    #[arg(long, requires = "image_id")]
    pub name: Option<String>,
    #[arg(long)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Descriptor manifest holding the query.
    #[arg(long, conflicts_with_all = ["image", "at"])]
    pub query: Option<PathBuf>,
    /// Record in the manifest to use; the first when omitted.
    #[arg(long, requires = "query")]
    pub record: Option<u32>,
    /// Query with a reference image's own descriptors.
    #[arg(long, conflicts_with = "at")]
    pub image: Option<u32>,
    /// Observe the synthetic world at `x,y` floor-plan pixels.
    #[arg(long, requires = "heading")]
    pub at: Option<String>,
    /// Heading in degrees for --at.
    #[arg(long)]
    pub heading: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NavigateArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Run the simulated walker offline. Live clients use the HTTP API.
    #[arg(long)]
    pub sim: bool,
    /// Destination name.
    #[arg(long)]
    pub destination: String,
    /// Start `x,y` in floor-plan pixels; random when omitted.
    #[arg(long)]
    pub start: Option<String>,
    /// Starting heading, degrees.
    #[arg(long)]
    pub heading: Option<f64>,
    /// Seconds between automatic captures; captures run back to back when omitted.
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_captures: Option<usize>,
    /// Print every capture.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Frame rates, e.g. `1,5,...,50`.
    #[arg(long, default_value = "1,5,10,15,20,25,30,40,50")]
    pub alpha: String,
    /// Slice rates, e.g. `1..6`.
    #[arg(long, default_value = "1..6")]
    pub beta: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 17)]
    pub points: usize,
    /// Metres of wall clearance around test points.
    #[arg(long, default_value_t = 1.0)]
    pub clearance: f64,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Write the tables as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "WAYFINDER_BIND", default_value = DEFAULT_BIND)]
    pub bind: SocketAddr,
    #[arg(long, env = "WAYFINDER_MAP_ROOT", default_value = "maps")]
    pub map_root: PathBuf,
    /// Do not admit queries into the live map.
    #[arg(long)]
    pub no_evolve: bool,
}

/// Failure reported as `error[code]: message` with a non-zero exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>, exit: i32) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            exit,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new("invalid_argument", message, 2)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        let exit = match e.status.as_u16() {
            400 => 2,
            404 => 3,
            409 => 4,
            422 => 5,
            _ => 1,
        };
        Self::new(e.code, e.message, exit)
    }
}

fn api<E>(e: E) -> CliError
where
    ApiError: From<E>,
{
    ApiError::from(e).into()
}

fn ingest(e: IngestError) -> CliError {
    match e {
        IngestError::Io { .. } => CliError::new("io", e.to_string(), 1),
        _ => CliError::new("invalid_descriptors", e.to_string(), 2),
    }
}

fn io(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()), 1)
}

pub type CliResult = Result<(), CliError>;

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Map(MapCommand::Build(a)) => build(a),
        Command::Map(MapCommand::Align(a)) => align(a),
        Command::Map(MapCommand::Boundaries(a)) => boundaries(a),
        Command::Map(MapCommand::Destinations(a)) => destinations(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Navigate(a) => navigate(a),
        Command::Eval(EvalCommand::Sweep(a)) => sweep(a),
        Command::Eval(EvalCommand::Fixture(a)) => fixture(a),
        Command::Serve(a) => serve(a),
    }
}

fn open(dir: &Path) -> Result<TopometricMap, CliError> {
    load_map(dir).map_err(api)
}

fn world_of(dir: &Path) -> Result<(SyntheticWorld, WorldFile), CliError> {
    let w = read_world(dir)?.ok_or_else(|| {
        CliError::new(
            "no_ground_truth",
            format!("{} has no world.json; only synthetic maps can be simulated or swept", dir.display()),
            2,
        )
    })?;
    Ok((SyntheticWorld::new(w.world.clone()), w))
}

fn check_version(map: &TopometricMap, expected: Option<u64>) -> CliResult {
    match expected {
        Some(v) if v != map.version() => Err(ApiError::version_conflict(v, map.version()).into()),
        _ => Ok(()),
    }
}

fn build(a: BuildArgs) -> CliResult {
    let (mut map, world) = if a.synthetic {
        let config: WorldConfig = match &a.world {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?
            }
            None => WorldConfig::default(),
        };
        let survey = SurveyPlan {
            spacing: a.spacing.unwrap_or(SurveyPlan::default().spacing),
            m: a.m,
            theta: a.theta,
            min_features: a.min_features,
            ..SurveyPlan::default()
        };
        let w = SyntheticWorld::new(config.clone());
        let (map, frames, report) = w.build_map(&survey).map_err(api)?;
        println!(
            "surveyed {} frames: {} slices, {} kept, {} dropped",
            frames.len(),
            report.slices,
            report.kept,
            report.dropped
        );
        if let Some(dir) = &a.export_survey {
            let (file, records) = w.export_survey(&survey).map_err(api)?;
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            let path = dir.join("survey.json");
            fs::write(&path, serde_json::to_string_pretty(&file).expect("survey serializes")).map_err(|e| io(&path, e))?;
            write_descriptor_files(dir, "descriptors", &records, config.global_dim, config.local_dim).map_err(ingest)?;
            println!("exported survey to {}", dir.display());
        }
        (map, Some(WorldFile { world: config, survey }))
    } else {
        let (Some(survey_path), Some(desc_path)) = (&a.survey, &a.descriptors) else {
            return Err(CliError::invalid("give --synthetic, or --survey with --descriptors"));
        };
        let text = fs::read_to_string(survey_path).map_err(|e| io(survey_path, e))?;
        let survey = parse_survey_json(&text, survey_path).map_err(api)?;
        let (manifest, records) = ingest_descriptor_files(desc_path).map_err(ingest)?;
        let transform = match &a.transform {
            Some(t) => parse_transform(t).map_err(CliError::invalid)?,
            None => FloorTransform::identity(),
        };
        let frames = survey.assemble(records, a.m).map_err(api)?;
        let (images, report) =
            build_reference_database(&frames, a.m, a.theta, a.min_features, &transform).map_err(api)?;
        println!(
            "{} frames: {} slices, {} kept, {} dropped",
            report.frames, report.slices, report.kept, report.dropped
        );
        let header = MapHeader {
            name: a.name.clone(),
            transform,
            scale: a.scale,
            floor_plan: None,
            camera: Default::default(),
            global_dim: manifest.global_dim,
            local_dim: manifest.local_dim,
        };
        let landmarks = survey.map_landmarks(&transform);
        (TopometricMap::new(header, images, landmarks).map_err(api)?, None)
    };
    fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    if let Some(plan) = &a.floor_plan {
        let raster = Raster::from_png(plan).map_err(|e| io(plan, e))?;
        let target = a.out.join("floor_plan.png");
        fs::copy(plan, &target).map_err(|e| io(&target, e))?;
        map = with_floor_plan(map, "floor_plan.png")?;
        if let Some(min_len) = a.extract_boundaries {
            let n = add_extracted(&mut map, &raster, min_len)?;
            println!("extracted {n} boundaries");
        }
    }
    save_map(&map, &a.out).map_err(api)?;
    if let Some(w) = &world {
        write_world(&a.out, w)?;
    }
    println!(
        "wrote {} ({} images, {} landmarks, {} boundaries, version {})",
        a.out.display(),
        map.len(),
        map.landmarks().len(),
        map.boundaries().len(),
        map.version()
    );
    Ok(())
}

/// Rebuilds `map` with a floor plan reference in its header.
fn with_floor_plan(map: TopometricMap, file: &str) -> Result<TopometricMap, CliError> {
    let mut header = map.header().clone();
    header.floor_plan = Some(file.to_string());
    let images = map.images().iter().map(|i| (**i).clone()).collect();
    let mut rebuilt = TopometricMap::new(header, images, map.landmarks().to_vec()).map_err(api)?;
    let keep: Vec<NewBoundary> = map
        .boundaries()
        .iter()
        .map(|b| NewBoundary {
            a: b.a,
            b: b.b,
            source: b.source,
        })
        .collect();
    if !keep.is_empty() {
        rebuilt.edit_boundaries(&keep, &[]).map_err(api)?;
    }
    for d in map.destinations() {
        rebuilt.define_destination(d.image_id, &d.name).map_err(api)?;
    }
    Ok(rebuilt)
}

fn add_extracted(map: &mut TopometricMap, raster: &Raster, min_len: usize) -> Result<usize, CliError> {
    let found = extract_boundaries(raster, min_len).map_err(api)?;
    let adds: Vec<NewBoundary> = found
        .iter()
        .map(|b| NewBoundary {
            a: b.a,
            b: b.b,
            source: BoundarySource::Extracted,
        })
        .collect();
    if !adds.is_empty() {
        map.edit_boundaries(&adds, &[]).map_err(api)?;
    }
    Ok(adds.len())
}

fn align(a: AlignArgs) -> CliResult {
    let mut map = open(&a.map)?;
    check_version(&map, a.expected_version)?;
    let pairs: Vec<(MapPoint3, FloorPoint)> = a
        .pairs
        .iter()
        .map(|p| parse_correspondence(p))
        .collect::<Result<_, _>>()
        .map_err(CliError::invalid)?;
    let fit = estimate_floor_transform(&pairs).map_err(|e| CliError::new("invalid_alignment", e.to_string(), 2))?;
    let [r0, r1] = fit.transform.rows();
    println!("transform {:?}", r0);
    println!("          {:?}", r1);
    for (i, r) in fit.residuals.iter().enumerate() {
        println!("residual {i}: {r:.4} px");
    }
    println!("rms {:.4} px", fit.rms);
    if a.commit {
        map.realign(fit.transform);
        save_map(&map, &a.map).map_err(api)?;
        println!("committed version {}", map.version());
    }
    Ok(())
}

fn boundaries(a: BoundaryArgs) -> CliResult {
    let mut map = open(&a.map)?;
    check_version(&map, a.expected_version)?;
    let mut adds = Vec::new();
    for s in &a.add {
        let (p, q) = parse_segment(s).map_err(CliError::invalid)?;
        adds.push(NewBoundary {
            a: p,
            b: q,
            source: BoundarySource::Manual,
        });
    }
    if let Some(min_len) = a.extract {
        let Some(plan) = map.header().floor_plan.clone() else {
            return Err(CliError::invalid("map has no floor plan to extract from"));
        };
        let path = a.map.join(plan);
        let raster = Raster::from_png(&path).map_err(|e| io(&path, e))?;
        adds.extend(extract_boundaries(&raster, min_len).map_err(api)?.into_iter().map(|b| NewBoundary {
            a: b.a,
            b: b.b,
            source: BoundarySource::Extracted,
        }));
    }
    if adds.is_empty() && a.delete.is_empty() {
        for b in map.boundaries() {
            println!(
                "{:>5} {:?} ({:.1},{:.1}) -> ({:.1},{:.1})",
                b.id, b.source, b.a.x, b.a.y, b.b.x, b.b.y
            );
        }
        return Ok(());
    }
    let delta = map.edit_boundaries(&adds, &a.delete).map_err(api)?;
    save_map(&map, &a.map).map_err(api)?;
    println!(
        "added {}, removed {}, version {}",
        delta.added.len(),
        delta.removed.len(),
        map.version()
    );
    Ok(())
}

fn destinations(a: DestinationArgs) -> CliResult {
    let mut map = open(&a.map)?;
    if let (Some(id), Some(name)) = (a.image_id, &a.name) {
        check_version(&map, a.expected_version)?;
        let v = map.define_destination(id, name).map_err(api)?;
        save_map(&map, &a.map).map_err(api)?;
        println!("{name} -> image {id}, version {v}");
        return Ok(());
    }
    for d in map.destinations() {
        let loc = map.image(d.image_id).map(|i| i.location).unwrap_or_default();
        println!("{}\timage {}\t({:.1}, {:.1})", d.name, d.image_id, loc.x, loc.y);
    }
    Ok(())
}

fn localize_cmd(a: LocalizeArgs) -> CliResult {
    let map = open(&a.map)?;
    let query = if let Some(path) = &a.query {
        let (_, records) = ingest_descriptor_files(path).map_err(ingest)?;
        let record = match a.record {
            Some(id) => records.into_iter().find(|r| r.image_id == id),
            None => records.into_iter().next(),
        }
        .ok_or_else(|| CliError::new("not_found", "no such record in the manifest", 3))?;
        Query {
            global: record.global.0,
            locals: record.locals,
        }
    } else if let Some(id) = a.image {
        let img = map
            .image(id)
            .ok_or_else(|| CliError::new("not_found", format!("image {id} not found"), 3))?;
        Query {
            global: img.global.0.clone(),
            locals: img.locals.clone(),
        }
    } else if let Some(at) = &a.at {
        let p = parse_floor_point(at).map_err(CliError::invalid)?;
        let (world, _) = world_of(&a.map)?;
        world
            .query(p, Direction::new(a.heading.unwrap_or(0.0)))
            .map_err(|e| CliError::invalid(e.to_string()))?
    } else {
        return Err(CliError::invalid("give --query, --image or --at"));
    };
    let r = localize(&query, &map, &LocalizationConfig::default(), &MutualNearestNeighbor::default()).map_err(api)?;
    println!("location {} {}", r.location.x, r.location.y);
    match r.direction {
        Some(d) => println!("direction {:.2}", d.degrees()),
        None => println!("direction unknown"),
    }
    println!(
        "method {:?}, k {}, survivors {}, pnp inliers {}",
        r.method, r.k_used, r.survivors, r.pnp_inliers
    );
    Ok(())
}

fn navigate(a: NavigateArgs) -> CliResult {
    if !a.sim {
        return Err(CliError::invalid("navigate runs offline only with --sim; live clients use the HTTP API"));
    }
    let map = open(&a.map)?;
    let (world, _) = world_of(&a.map)?;
    let dest = map
        .destination(&a.destination)
        .cloned()
        .ok_or_else(|| CliError::new("not_found", format!("destination {} not found", a.destination), 3))?;
    let graph = NavGraph::build(&map, NavConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let start = match &a.start {
        Some(s) => parse_floor_point(s).map_err(CliError::invalid)?,
        None => {
            let cfg = world.config();
            let (x, z) = loop {
                let x = rng.random_range(0.0..cfg.width);
                let z = rng.random_range(0.0..cfg.depth);
                if world.wall_clearance(x, z) >= 0.5 {
                    break (x, z);
                }
            };
            world.to_floor(x, z)
        }
    };
    let heading = Direction::new(a.heading.unwrap_or_else(|| rng.random_range(0.0..360.0)));
    let sim = SimConfig {
        seed: a.seed,
        max_captures: a.max_captures.unwrap_or(SimConfig::default().max_captures),
        ..SimConfig::default()
    };
    let out = simulate(
        &world,
        &map,
        &graph,
        &dest,
        start,
        heading,
        &LocalizationConfig::default(),
        &MutualNearestNeighbor::default(),
        &sim,
    )
    .map_err(|e| CliError::new("simulation_failed", e.to_string(), 1))?;
    let period = a.period.filter(|p| *p > 0.0).map(Duration::from_secs_f64);
    if a.trace || period.is_some() {
        for (i, s) in out.trace.iter().enumerate() {
            if i > 0 {
                if let Some(p) = period {
                    std::thread::sleep(p);
                }
            }
            let what = match &s.instruction {
                Some(Instruction::Walk { text, .. }) => text.clone(),
                Some(Instruction::Arrived { distance, .. }) => format!("arrived ({distance:.1} ft)"),
                None => "localization failed, turning".into(),
            };
            println!(
                "{i:>3} at ({:.1},{:.1}) facing {:.0}: {what}",
                s.true_location.x,
                s.true_location.y,
                s.true_direction.degrees()
            );
        }
    }
    println!(
        "{} after {} captures ({} failed); {:.2} ft from {}",
        if out.arrived { "arrived" } else { "stopped" },
        out.captures,
        out.failed_captures,
        out.final_distance,
        dest.name
    );
    if !out.arrived {
        return Err(CliError::new("not_arrived", "capture budget exhausted before arrival", 5));
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult {
    let map = open(&a.map)?;
    let (world, _) = world_of(&a.map)?;
    let cfg = SweepConfig {
        alphas: parse_rates(&a.alpha).map_err(|e| CliError::invalid(format!("--alpha: {e}")))?,
        betas: parse_rates(&a.beta).map_err(|e| CliError::invalid(format!("--beta: {e}")))?,
    };
    let cases = synthetic_test_points(&world, a.points, a.clearance, a.seed);
    let report = run_sweep(
        &map,
        &cases,
        &cfg,
        &LocalizationConfig::default(),
        &MutualNearestNeighbor::default(),
    )
    .map_err(api)?;
    report.write(&a.out).map_err(api)?;
    let means = report.frame_density.column_means();
    for (c, m) in report.frame_density.columns.iter().zip(means) {
        match m {
            Some(m) => println!("{c}: mean location error {m:.2} ft"),
            None => println!("{c}: no estimates"),
        }
    }
    if let Some(p) = report.frame_density_p {
        println!("frame density p = {:.2} ({}/{})", p.p, p.hits, p.pairs);
    }
    if let Some(p) = report.direction_density_p {
        println!("direction density p = {:.2} ({}/{})", p.p, p.hits, p.pairs);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fixture(a: FixtureArgs) -> CliResult {
    let tables = [
        ("frame_density", fixtures::frame_density()),
        ("direction_density", fixtures::direction_density()),
        ("direction_error", fixtures::direction_error()),
    ];
    for (name, table) in &tables[..2] {
        let p = order_probability(table).map_err(api)?;
        println!("{name}: p = {:.2} ({}/{} pairs)", p.p, p.hits, p.pairs);
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, table) in &tables {
            let path = dir.join(format!("{name}.csv"));
            fs::write(&path, table.to_csv()).map_err(|e| io(&path, e))?;
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let mut config = ServiceConfig::new(&a.map_root);
    config.evolve = !a.no_evolve;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("internal", e.to_string(), 1))?;
    runtime
        .block_on(wayfinder_service::serve(a.bind, config))
        .map_err(|e| CliError::new("serve_failed", e.to_string(), 1))
}
