//! Density study: downsampling, error tables, order probability and sweeps.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::FeatureMatcher;
use crate::geometry::{Direction, FloorPoint};
use crate::localization::{localize, LocalizationConfig, Query};
use crate::map::{ImageOrigin, TopometricMap};
use crate::synthetic::{Role, SyntheticWorld};

/// Cell text for a value that could not be retrieved.
pub const MISSING: &str = "n/s";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("table has no comparable cell pairs")]
    NoComparablePairs,
    #[error("table row {row} has {found} cells, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("bad cell {text:?} at row {row}, column {column}")]
    Cell { row: usize, column: usize, text: String },
    #[error("negative or non-finite cell at row {row}, column {column}")]
    InvalidValue { row: usize, column: usize },
    #[error("rate must be at least 1")]
    InvalidRate,
    #[error("no test points")]
    NoTestPoints,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Feet between an estimate and ground truth.
pub fn location_error(est: FloorPoint, gt: FloorPoint, scale: f64) -> f64 {
    scale * est.distance(&gt)
}

/// Circular absolute difference in degrees, in `[0, 180]`.
pub fn direction_error(est: Direction, gt: Direction) -> f64 {
    est.circular_difference(gt)
}

/// Rows are test points (or rates), columns are downsampling rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    /// Header of the label column.
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    /// `None` marks an unretrievable cell.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ErrorTable {
    pub fn new(corner: &str, columns: Vec<String>, rows: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self, EvalError> {
        let t = Self {
            corner: corner.to_string(),
            columns,
            rows,
            cells,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.cells.len() != self.rows.len() {
            return Err(EvalError::Ragged {
                row: self.cells.len().min(self.rows.len()),
                found: self.cells.len(),
                expected: self.rows.len(),
            });
        }
        for (i, row) in self.cells.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(EvalError::Ragged {
                    row: i,
                    found: row.len(),
                    expected: self.columns.len(),
                });
            }
            for (j, c) in row.iter().enumerate() {
                if let Some(v) = c {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(EvalError::InvalidValue { row: i, column: j });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let corner = header.get(0).unwrap_or_default().to_string();
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            rows.push(record.get(0).unwrap_or_default().to_string());
            let mut row = Vec::new();
            for (j, field) in record.iter().skip(1).enumerate() {
                let field = field.trim();
                if field == MISSING {
                    row.push(None);
                } else {
                    let v: f64 = field.parse().map_err(|_| EvalError::Cell {
                        row: i,
                        column: j,
                        text: field.to_string(),
                    })?;
                    row.push(Some(v));
                }
            }
            cells.push(row);
        }
        Self::new(&corner, columns, rows, cells)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.corner.clone()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("write to memory");
        for (label, row) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| match c {
                Some(v) => format!("{v}"),
                None => MISSING.to_string(),
            }));
            w.write_record(&rec).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }

    /// Mean of the retrievable cells in each column.
    pub fn column_means(&self) -> Vec<Option<f64>> {
        (0..self.columns.len())
            .map(|j| {
                let vals: Vec<f64> = self.cells.iter().filter_map(|r| r[j]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }
}

impl fmt::Display for ErrorTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

/// Tally behind an order probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderProbability {
    pub p: f64,
    /// Pairs with the left cell not greater than the right one.
    pub hits: usize,
    /// Pairs where both cells are present.
    pub pairs: usize,
}

/// Fraction of same-row pairs `j < k` with `E_ij <= E_ik`; pairs touching a
/// missing cell are skipped.
pub fn order_probability(table: &ErrorTable) -> Result<OrderProbability, EvalError> {
    let mut hits = 0;
    let mut pairs = 0;
    for row in &table.cells {
        for j in 0..row.len() {
            let Some(a) = row[j] else { continue };
            for b in row[j + 1..].iter().flatten() {
                pairs += 1;
                if a <= *b {
                    hits += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(EvalError::NoComparablePairs);
    }
    Ok(OrderProbability {
        p: hits as f64 / pairs as f64,
        hits,
        pairs,
    })
}

/// Reference error tables shipped with the crate.
pub mod fixtures {
    use super::ErrorTable;

    /// Location error (ft) at 17 test points against frame downsampling.
    pub const FRAME_DENSITY: &str = include_str!("../fixtures/frame_density.csv");
    /// Location error (ft) at 17 test points against slice downsampling.
    pub const DIRECTION_DENSITY: &str = include_str!("../fixtures/direction_density.csv");
    /// Mean direction error (degrees) over frame (rows) and slice (columns) rates.
    pub const DIRECTION_ERROR: &str = include_str!("../fixtures/direction_error.csv");

    pub fn frame_density() -> ErrorTable {
        ErrorTable::parse_csv(FRAME_DENSITY).expect("embedded table parses")
    }

    pub fn direction_density() -> ErrorTable {
        ErrorTable::parse_csv(DIRECTION_DENSITY).expect("embedded table parses")
    }

    pub fn direction_error() -> ErrorTable {
        ErrorTable::parse_csv(DIRECTION_ERROR).expect("embedded table parses")
    }
}

/// Keeps mapped frames whose id is a multiple of `alpha`. Evolved images are
/// not part of any frame and are kept.
pub fn frame_downsample(map: &TopometricMap, alpha: usize) -> Result<TopometricMap, EvalError> {
    if alpha == 0 {
        return Err(EvalError::InvalidRate);
    }
    Ok(map.subset(|img| match img.origin {
        ImageOrigin::Mapped => img.frame_id as usize % alpha == 0,
        ImageOrigin::Evolved { .. } => true,
    }))
}

/// Within each mapped frame keeps every `beta`-th remaining slice, starting
/// from the first.
pub fn direction_downsample(map: &TopometricMap, beta: usize) -> Result<TopometricMap, EvalError> {
    if beta == 0 {
        return Err(EvalError::InvalidRate);
    }
    let mut keep = std::collections::HashSet::new();
    let mut frames: std::collections::BTreeMap<u32, Vec<(u32, u32)>> = Default::default();
    for img in map.images() {
        match img.origin {
            ImageOrigin::Mapped => frames.entry(img.frame_id).or_default().push((img.slice_index, img.id)),
            ImageOrigin::Evolved { .. } => {
                keep.insert(img.id);
            }
        }
    }
    for slices in frames.values_mut() {
        slices.sort_unstable();
        keep.extend(slices.iter().step_by(beta).map(|&(_, id)| id));
    }
    Ok(map.subset(|img| keep.contains(&img.id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub index: usize,
    pub location: FloorPoint,
    pub direction: Direction,
}

/// A test point with the query observed there.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub point: TestPoint,
    pub query: Query,
}

/// `count` seeded test points at least `clearance` metres from every wall,
/// each facing whichever of 16 headings sees the most features.
pub fn synthetic_test_points(world: &SyntheticWorld, count: usize, clearance: f64, seed: u64) -> Vec<TestCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = world.config();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.random_range(0.0..cfg.width);
        let z = rng.random_range(0.0..cfg.depth);
        if world.wall_clearance(x, z) < clearance {
            continue;
        }
        let location = world.to_floor(x, z);
        let best = (0..16)
            .map(|i| Direction::new(i as f64 * 22.5))
            .filter_map(|d| world.observe(location, d, Role::Query).ok().map(|o| (o, d)))
            .max_by_key(|(o, _)| o.locals.len());
        let Some((obs, direction)) = best else { continue };
        out.push(TestCase {
            point: TestPoint {
                index: out.len(),
                location,
                direction,
            },
            query: Query {
                global: obs.global.0,
                locals: obs.locals,
            },
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub alphas: Vec<usize>,
    pub betas: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1, 5, 10, 15, 20, 25, 30, 40, 50],
            betas: vec![1, 2, 3, 4, 5, 6],
        }
    }
}

/// One localized test point within one `(alpha, beta)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapEntry {
    pub point: usize,
    pub gt: FloorPoint,
    pub gt_direction: Direction,
    pub est: Option<FloorPoint>,
    pub est_direction: Option<Direction>,
    /// Feet.
    pub error: Option<f64>,
    /// Degrees.
    pub direction_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub alpha: usize,
    pub beta: usize,
    pub images: usize,
    pub entries: Vec<HeatmapEntry>,
}

/// Everything a sweep produces; serialized as the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: String,
    pub map_version: u64,
    /// Feet per floor-plan pixel.
    pub scale: f64,
    pub points: Vec<TestPoint>,
    pub config: SweepConfig,
    pub runs: Vec<SweepRun>,
    /// Location error per point against `alpha`, `beta = 1`.
    pub frame_density: ErrorTable,
    /// Location error per point against `beta`, `alpha = 1`.
    pub direction_density: ErrorTable,
    /// Mean direction error per `(alpha, beta)`; missing when any point lacks a direction.
    pub direction_error: ErrorTable,
    pub frame_density_p: Option<OrderProbability>,
    pub direction_density_p: Option<OrderProbability>,
}

impl EvalReport {
    fn run(&self, alpha: usize, beta: usize) -> Option<&SweepRun> {
        self.runs.iter().find(|r| r.alpha == alpha && r.beta == beta)
    }

    /// Writes the three CSV tables plus `report.json`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("frame_density.csv"), self.frame_density.to_csv())?;
        fs::write(dir.join("direction_density.csv"), self.direction_density.to_csv())?;
        fs::write(dir.join("direction_error.csv"), self.direction_error.to_csv())?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(dir.join("report.json"), json)?;
        Ok(())
    }
}

fn localize_case(
    map: &TopometricMap,
    case: &TestCase,
    cfg: &LocalizationConfig,
    matcher: &dyn FeatureMatcher,
) -> HeatmapEntry {
    let p = case.point;
    let mut entry = HeatmapEntry {
        point: p.index,
        gt: p.location,
        gt_direction: p.direction,
        est: None,
        est_direction: None,
        error: None,
        direction_error: None,
        failure: None,
    };
    match localize(&case.query, map, cfg, matcher) {
        Ok(r) => {
            entry.est = Some(r.location);
            entry.error = Some(location_error(r.location, p.location, map.scale()));
            entry.est_direction = r.direction;
            entry.direction_error = r.direction.map(|d| direction_error(d, p.direction));
        }
        Err(e) => entry.failure = Some(e.to_string()),
    }
    entry
}

/// Localizes every test case against every `(alpha, beta)` thinning of `map`.
pub fn run_sweep(
    map: &TopometricMap,
    cases: &[TestCase],
    sweep: &SweepConfig,
    cfg: &LocalizationConfig,
    matcher: &(dyn FeatureMatcher + Sync),
) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoTestPoints);
    }
    if sweep.alphas.iter().chain(&sweep.betas).any(|&r| r == 0) || sweep.alphas.is_empty() || sweep.betas.is_empty() {
        return Err(EvalError::InvalidRate);
    }
    let mut maps = Vec::new();
    for &a in &sweep.alphas {
        let thinned = frame_downsample(map, a)?;
        for &b in &sweep.betas {
            maps.push((a, b, direction_downsample(&thinned, b)?));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..maps.len()).flat_map(|m| (0..cases.len()).map(move |c| (m, c))).collect();
    let entries: Vec<HeatmapEntry> = jobs
        .par_iter()
        .map(|&(m, c)| localize_case(&maps[m].2, &cases[c], cfg, matcher))
        .collect();
    let runs: Vec<SweepRun> = maps
        .iter()
        .enumerate()
        .map(|(m, (a, b, thin))| SweepRun {
            alpha: *a,
            beta: *b,
            images: thin.len(),
            entries: entries[m * cases.len()..(m + 1) * cases.len()].to_vec(),
        })
        .collect();

    let mut report = EvalReport {
        map: map.name().to_string(),
        map_version: map.version(),
        scale: map.scale(),
        points: cases.iter().map(|c| c.point).collect(),
        config: sweep.clone(),
        runs,
        frame_density: ErrorTable::new("location", vec![], vec![], vec![])?,
        direction_density: ErrorTable::new("location", vec![], vec![], vec![])?,
        direction_error: ErrorTable::new("frames", vec![], vec![], vec![])?,
        frame_density_p: None,
        direction_density_p: None,
    };
    let point_rows: Vec<String> = cases.iter().map(|c| c.point.index.to_string()).collect();
    let base_beta = sweep.betas[0];
    let base_alpha = sweep.alphas[0];
    let column = |run: Option<&SweepRun>| -> Vec<Option<f64>> {
        run.map_or_else(|| vec![None; cases.len()], |r| r.entries.iter().map(|e| e.error).collect())
    };
    let frame_cols: Vec<Vec<Option<f64>>> = sweep.alphas.iter().map(|&a| column(report.run(a, base_beta))).collect();
    let dir_cols: Vec<Vec<Option<f64>>> = sweep.betas.iter().map(|&b| column(report.run(base_alpha, b))).collect();
    let transpose = |cols: &[Vec<Option<f64>>]| -> Vec<Vec<Option<f64>>> {
        (0..cases.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    };
    report.frame_density = ErrorTable::new(
        "location",
        sweep.alphas.iter().map(|a| format!("n/{a}")).collect(),
        point_rows.clone(),
        transpose(&frame_cols),
    )?;
    report.direction_density = ErrorTable::new(
        "location",
        sweep.betas.iter().map(|b| format!("m/{b}")).collect(),
        point_rows,
        transpose(&dir_cols),
    )?;
    let heading_cells = sweep
        .alphas
        .iter()
        .map(|&a| {
            sweep
                .betas
                .iter()
                .map(|&b| {
                    let run = report.run(a, b)?;
                    let errs: Option<Vec<f64>> = run.entries.iter().map(|e| e.direction_error).collect();
                    errs.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect()
        })
        .collect();
    report.direction_error = ErrorTable::new(
        "frames",
        sweep.betas.iter().map(|b| format!("m/{b}")).collect(),
        sweep.alphas.iter().map(|a| format!("n/{a}")).collect(),
        heading_cells,
    )?;
    report.frame_density_p = order_probability(&report.frame_density).ok();
    report.direction_density_p = order_probability(&report.direction_density).ok();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::tests::{header, image};
    use crate::map::ReferenceImage;
    use proptest::prelude::*;

    fn table(rows: Vec<Vec<Option<f64>>>) -> ErrorTable {
        let cols = rows.first().map_or(0, Vec::len);
        ErrorTable::new(
            "r",
            (0..cols).map(|j| j.to_string()).collect(),
            (0..rows.len()).map(|i| i.to_string()).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn location_error_examples() {
        let p = FloorPoint::new(4.0, 9.0);
        assert_eq!(location_error(p, p, 0.3), 0.0);
        assert_eq!(location_error(FloorPoint::new(0.0, 0.0), FloorPoint::new(3.0, 4.0), 1.0), 5.0);
    }

    #[test]
    fn direction_error_examples() {
        let d = |x| Direction::new(x);
        assert!((direction_error(d(10.0), d(350.0)) - 20.0).abs() < 1e-12);
        assert_eq!(direction_error(d(42.0), d(42.0)), 0.0);
        assert!((direction_error(d(0.0), d(180.0)) - 180.0).abs() < 1e-12);
    }

    #[test]
    fn fixture_shapes() {
        let t2 = fixtures::frame_density();
        assert_eq!((t2.rows.len(), t2.columns.len()), (17, 9));
        let t3 = fixtures::direction_density();
        assert_eq!((t3.rows.len(), t3.columns.len()), (17, 6));
        let t4 = fixtures::direction_error();
        assert_eq!((t4.rows.len(), t4.columns.len()), (9, 6));
        assert!(t4.cells.iter().flatten().any(Option::is_none));
    }

    #[test]
    fn fixture_probabilities() {
        let p2 = order_probability(&fixtures::frame_density()).unwrap();
        assert_eq!((p2.hits, p2.pairs), (441, 612));
        assert!((p2.p - 0.72).abs() <= 0.005);
        let p3 = order_probability(&fixtures::direction_density()).unwrap();
        assert_eq!((p3.hits, p3.pairs), (166, 255));
        assert!((p3.p - 0.65).abs() <= 0.005);
    }

    #[test]
    fn monotone_rows() {
        let up = table(vec![vec![Some(1.0), Some(2.0), Some(3.0)]; 4]);
        assert_eq!(order_probability(&up).unwrap().p, 1.0);
        let down = table(vec![vec![Some(3.0), Some(2.0), Some(1.0)]; 4]);
        assert_eq!(order_probability(&down).unwrap().p, 0.0);
    }

    #[test]
    fn missing_cells_drop_pairs() {
        let t = table(vec![vec![Some(1.0), None, Some(2.0)], vec![None, None, Some(1.0)]]);
        assert_eq!(order_probability(&t).unwrap().pairs, 1);
        let none = table(vec![vec![None, Some(1.0)]]);
        assert!(matches!(order_probability(&none), Err(EvalError::NoComparablePairs)));
        let single = table(vec![vec![Some(1.0)]]);
        assert!(matches!(order_probability(&single), Err(EvalError::NoComparablePairs)));
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let t = fixtures::direction_error();
        assert_eq!(ErrorTable::parse_csv(&t.to_csv()).unwrap(), t);
        assert!(matches!(ErrorTable::parse_csv("a,b\n0,x\n"), Err(EvalError::Cell { .. })));
        assert!(matches!(ErrorTable::parse_csv("a,b\n0,-1\n"), Err(EvalError::InvalidValue { .. })));
        assert!(ErrorTable::parse_csv("a,b\n0,1,2\n").is_err());
    }

    fn frames_map(frames: u32, m: usize) -> TopometricMap {
        let images: Vec<ReferenceImage> = (0..frames)
            .flat_map(|f| {
                (1..=m).map(move |t| {
                    let mut img = image(f * m as u32 + t as u32 - 1, f as f64, 0.0);
                    img.frame_id = f;
                    img.slice_index = t as u32;
                    img
                })
            })
            .collect();
        let lm = crate::map::Landmark {
            id: 0,
            position: crate::geometry::MapPoint3::new(0.0, 1.0, 0.0),
            floor_position: FloorPoint::new(0.0, 0.0),
        };
        TopometricMap::new(header(2, 4), images, vec![lm]).unwrap()
    }

    fn frame_ids(map: &TopometricMap) -> Vec<u32> {
        let mut f: Vec<u32> = map.images().iter().map(|i| i.frame_id).collect();
        f.dedup();
        f
    }

    #[test]
    fn downsampling_examples() {
        let map = frames_map(100, 1);
        assert_eq!(frame_downsample(&map, 1).unwrap(), map);
        assert_eq!(frame_ids(&frame_downsample(&map, 50).unwrap()), vec![0, 50]);
        let map = frames_map(2, 18);
        assert_eq!(direction_downsample(&map, 1).unwrap(), map);
        assert_eq!(direction_downsample(&map, 6).unwrap().len(), 6);
        assert!(matches!(frame_downsample(&map, 0), Err(EvalError::InvalidRate)));
    }

    #[test]
    fn direction_downsample_after_filter() {
        // Frame 0 lost slices 2, 3 and 7 to the feature filter.
        let map = frames_map(1, 12).subset(|i| ![2, 3, 7].contains(&i.slice_index));
        let kept: Vec<u32> = direction_downsample(&map, 3).unwrap().images().iter().map(|i| i.slice_index).collect();
        // Survivors 1,4,5,6,8,9,10,11,12: every third from the first.
        assert_eq!(kept, vec![1, 6, 10]);
    }

    proptest! {
        #[test]
        fn frame_downsample_formula(n in 1u32..300, alpha in 1usize..60) {
            let map = frames_map(n, 1);
            let got = frame_ids(&frame_downsample(&map, alpha).unwrap());
            let want: Vec<u32> = (0..n).filter(|f| *f as usize % alpha == 0).collect();
            prop_assert_eq!(got.len(), (n as usize).div_ceil(alpha));
            prop_assert_eq!(got, want);
        }

        #[test]
        fn direction_downsample_recount(m in 1usize..24, mask in proptest::collection::vec(any::<bool>(), 24), beta in 1usize..7) {
            let map = frames_map(3, m).subset(|i| mask[i.slice_index as usize - 1]);
            let per_frame = mask[..m].iter().filter(|b| **b).count();
            let thin = direction_downsample(&map, beta).unwrap();
            prop_assert_eq!(thin.len(), 3 * per_frame.div_ceil(beta));
        }

        #[test]
        fn probability_bounds_and_shift(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..50.0, 4), 1..10), shift in 0.0f64..10.0) {
            let t = table(rows.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect());
            let p = order_probability(&t).unwrap().p;
            prop_assert!((0.0..=1.0).contains(&p));
            let shifted = table(rows.iter().map(|r| r.iter().map(|v| Some(v + shift)).collect()).collect());
            let ps = order_probability(&shifted).unwrap().p;
            prop_assert!((p - ps).abs() < 1e-12 || shift_changed_order(&rows, shift));
        }

        #[test]
        fn reversal_complements(rows in proptest::collection::vec(proptest::collection::hash_set(0u32..10_000, 5), 1..10)) {
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|s| s.into_iter().map(|v| v as f64).collect()).collect();
            let t = table(rows.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect());
            let r = table(rows.iter().map(|r| r.iter().rev().map(|v| Some(*v)).collect()).collect());
            let (p, q) = (order_probability(&t).unwrap().p, order_probability(&r).unwrap().p);
            prop_assert!((p + q - 1.0).abs() < 1e-12);
        }
    }

    /// Float rounding after a shift can flip an exact tie.
    fn shift_changed_order(rows: &[Vec<f64>], shift: f64) -> bool {
        rows.iter().any(|r| {
            r.iter().enumerate().any(|(j, a)| {
                r[j + 1..].iter().any(|b| (a <= b) != (a + shift <= b + shift))
            })
        })
    }

    #[test]
    fn single_point_single_rate() {
        use crate::descriptors::MutualNearestNeighbor;
        use crate::synthetic::{SurveyPlan, WorldConfig};
        let world = SyntheticWorld::new(WorldConfig::default());
        let (map, _, _) = world.build_map(&SurveyPlan::default()).unwrap();
        let cases = synthetic_test_points(&world, 1, 1.0, 7);
        let sweep = SweepConfig { alphas: vec![1], betas: vec![1] };
        let report = run_sweep(&map, &cases, &sweep, &LocalizationConfig::default(), &MutualNearestNeighbor::default()).unwrap();
        assert_eq!(report.frame_density.cells.len(), 1);
        assert_eq!(report.frame_density.cells[0].len(), 1);
        let e = &report.runs[0].entries[0];
        let (est, gt) = (e.est.unwrap(), e.gt);
        let hand = ((est.x - gt.x).powi(2) + (est.y - gt.y).powi(2)).sqrt() * report.scale;
        assert!((e.error.unwrap() - hand).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let back: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.runs.len(), 1);
    }
}
