//! Query localization.
//!
//! Retrieval ranks reference images by global-descriptor distance, local
//! matching counts shared keypoints with each candidate, and the location is
//! the match-weighted mean of the well-matched candidates. Direction comes
//! from PnP on the 2D-3D correspondences gathered over all candidates.

pub mod pnp;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{squared_distance, squared_distance_pair, DescriptorError, FeatureMatcher, LocalFeature, MatchSet};
use crate::geometry::{Direction, FloorPoint, MapPoint3};
use crate::map::{ImageId, TopometricMap};
use pnp::{solve_pnp, CameraModel, Correspondence, PnpConfig, PnpError};

#[derive(Debug, Error, PartialEq)]
pub enum LocalizationError {
    #[error("map has no reference images")]
    EmptyDatabase,
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("no candidate reached {threshold} matches up to K = {k}")]
    LocalizationFailed { k: usize, threshold: usize },
}

/// Thresholds and K growth for the weighted-average ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    /// A candidate contributes to the average only with more matches than this.
    pub survivor_threshold: usize,
    /// The single best candidate is used when it has more matches than this.
    pub fallback_threshold: usize,
    pub k0: usize,
    pub k_max: usize,
    pub growth: usize,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            survivor_threshold: 75,
            fallback_threshold: 30,
            k0: 10,
            k_max: 80,
            growth: 2,
        }
    }
}

impl LadderConfig {
    /// The K after `k`, or `None` once past `k_max`.
    pub fn next_k(&self, k: usize) -> Option<usize> {
        let next = k.saturating_mul(self.growth.max(2));
        (next <= self.k_max).then_some(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WeightedAverage,
    LargestMatchFallback,
}

/// Outcome of one pass of the ladder over a candidate list.
#[derive(Debug, Clone, PartialEq)]
pub enum LadderStep {
    Located {
        location: FloorPoint,
        method: Method,
        /// `(candidate index, weight)` of every contributor.
        weights: Vec<(usize, f64)>,
    },
    GrowK,
}

/// One pass of the ladder over `(location, match count)` pairs.
pub fn weighted_location(candidates: &[(FloorPoint, usize)], cfg: &LadderConfig) -> LadderStep {
    let survivors: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].1 > cfg.survivor_threshold)
        .collect();
    if !survivors.is_empty() {
        let total: f64 = survivors.iter().map(|&i| candidates[i].1 as f64).sum();
        let weights: Vec<(usize, f64)> = survivors
            .iter()
            .map(|&i| (i, candidates[i].1 as f64 / total))
            .collect();
        let (mut x, mut y) = (0.0, 0.0);
        for &(i, w) in &weights {
            x += w * candidates[i].0.x;
            y += w * candidates[i].0.y;
        }
        return LadderStep::Located {
            location: FloorPoint::new(x, y),
            method: Method::WeightedAverage,
            weights,
        };
    }
    // First maximum wins, which is the closest in descriptor space.
    let best = (0..candidates.len()).fold(None, |best: Option<usize>, i| match best {
        Some(b) if candidates[b].1 >= candidates[i].1 => Some(b),
        _ => Some(i),
    });
    match best {
        Some(b) if candidates[b].1 > cfg.fallback_threshold => LadderStep::Located {
            location: candidates[b].0,
            method: Method::LargestMatchFallback,
            weights: vec![(b, 1.0)],
        },
        _ => LadderStep::GrowK,
    }
}

/// Runs the ladder, asking `fetch(k)` for the top-`k` candidates each time K
/// grows. `database_len` stops growth once every image is a candidate.
pub fn run_ladder(
    cfg: &LadderConfig,
    database_len: usize,
    mut fetch: impl FnMut(usize) -> Vec<(FloorPoint, usize)>,
) -> Result<(LadderStep, usize), LocalizationError> {
    if database_len == 0 {
        return Err(LocalizationError::EmptyDatabase);
    }
    let mut k = cfg.k0.max(1);
    loop {
        let cands = fetch(k.min(database_len));
        let step = weighted_location(&cands, cfg);
        if step != LadderStep::GrowK {
            return Ok((step, k));
        }
        match cfg.next_k(k) {
            Some(next) if k < database_len => k = next,
            _ => {
                return Err(LocalizationError::LocalizationFailed {
                    k,
                    threshold: cfg.fallback_threshold,
                })
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Ranked {
    d2: f64,
    id: u32,
    index: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn top_k_serial<'a>(query: &[f32], rows: impl Iterator<Item = (usize, u32, &'a [f32])>, k: usize) -> Vec<Ranked> {
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    let mut offer = |r: Ranked| {
        if heap.len() < k {
            heap.push(r);
        } else if r < *heap.peek().unwrap() {
            heap.pop();
            heap.push(r);
        }
    };
    let mut rows = rows.peekable();
    while let Some((index, id, row)) = rows.next() {
        match rows.next_if(|next| next.2.len() == row.len()) {
            Some((index2, id2, row2)) => {
                let (d2, e2) = squared_distance_pair(query, row, row2);
                offer(Ranked { d2, id, index });
                offer(Ranked {
                    d2: e2,
                    id: id2,
                    index: index2,
                });
            }
            None => offer(Ranked {
                d2: squared_distance(query, row),
                id,
                index,
            }),
        }
    }
    heap.into_sorted_vec()
}

/// Exact top-`k` over `(id, descriptor)` rows: ascending distance, ties by
/// ascending id. Returns `(row index, id, distance)`.
pub fn top_k(query: &[f32], rows: &[(u32, &[f32])], k: usize) -> Vec<(usize, u32, f64)> {
    const CHUNK: usize = 256;
    let k = k.min(rows.len());
    if k == 0 {
        return Vec::new();
    }
    let partial: Vec<Vec<Ranked>> = rows
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            top_k_serial(
                query,
                chunk.iter().enumerate().map(|(i, &(id, row))| (c * CHUNK + i, id, row)),
                k,
            )
        })
        .collect();
    let mut all: Vec<Ranked> = partial.into_iter().flatten().collect();
    all.sort_unstable();
    all.truncate(k);
    all.into_iter().map(|r| (r.index, r.id, r.d2.sqrt())).collect()
}

/// Retrieved reference image: map index, id and descriptor distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved {
    pub index: usize,
    pub image_id: ImageId,
    pub distance: f64,
}

pub fn retrieve_candidates(query: &[f32], map: &TopometricMap, k: usize) -> Result<Vec<Retrieved>, LocalizationError> {
    if map.is_empty() {
        return Err(LocalizationError::EmptyDatabase);
    }
    let dim = map.header().global_dim;
    if query.len() != dim {
        return Err(DescriptorError::DimensionMismatch { expected: dim, got: query.len() }.into());
    }
    let rows: Vec<(u32, &[f32])> = map.images().iter().map(|i| (i.id, i.global.as_slice())).collect();
    Ok(top_k(query, &rows, k)
        .into_iter()
        .map(|(index, image_id, distance)| Retrieved { index, image_id, distance })
        .collect())
}

/// A candidate with its local matches against the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub image_id: ImageId,
    pub distance: f64,
    pub matches: MatchSet,
}

/// Candidate as reported in results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub image_id: ImageId,
    pub distance: f64,
    pub match_count: usize,
    pub location: FloorPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub location: FloorPoint,
    pub direction: Option<Direction>,
    pub method: Method,
    pub candidates: Vec<CandidateSummary>,
    /// Candidates that contributed to the location.
    pub survivors: usize,
    pub pnp_inliers: usize,
    pub k_used: usize,
    /// PnP camera centre in the reconstruction frame.
    pub camera_center: Option<MapPoint3>,
    /// `(query keypoint index, landmark id)` of PnP inliers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pnp_links: Vec<(u32, u32)>,
    /// Why direction estimation failed, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    pub ladder: LadderConfig,
    pub pnp: PnpConfig,
    /// Overrides the map's camera model when set.
    pub camera: Option<CameraModel>,
    /// A candidate at descriptor distance exactly 0 is the query itself and
    /// its location is returned as is.
    pub exact_match_shortcut: bool,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            ladder: LadderConfig::default(),
            pnp: PnpConfig::default(),
            camera: None,
            exact_match_shortcut: true,
        }
    }
}

/// Direction estimate with its supporting evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionEstimate {
    pub direction: Direction,
    pub inliers: usize,
    pub camera_center: MapPoint3,
    pub links: Vec<(u32, u32)>,
}

/// 2D-3D correspondences from every candidate's matches to linked reference
/// keypoints, deduplicated by `(query keypoint, landmark)`.
pub fn gather_correspondences(
    query: &[LocalFeature],
    candidates: &[Candidate],
    map: &TopometricMap,
) -> (Vec<Correspondence>, Vec<(u32, u32)>) {
    let mut seen = HashSet::new();
    let mut corr = Vec::new();
    let mut links = Vec::new();
    for c in candidates {
        let img = &map.images()[c.index];
        for &(qi, ri) in &c.matches.pairs {
            let Some(lid) = img.locals[ri].landmark_id else { continue };
            if !seen.insert((qi, lid)) {
                continue;
            }
            let Some(lm) = map.landmark(lid) else { continue };
            let kp = query[qi].keypoint;
            corr.push(Correspondence {
                pixel: Vector2::new(kp[0] as f64, kp[1] as f64),
                point: lm.position.to_vector(),
            });
            links.push((qi as u32, lid));
        }
    }
    (corr, links)
}

/// PnP over the candidates' correspondences; the heading of the optical axis
/// is mapped onto the floor plan.
pub fn estimate_direction(
    query: &[LocalFeature],
    candidates: &[Candidate],
    map: &TopometricMap,
    camera: &CameraModel,
    cfg: &PnpConfig,
) -> Result<DirectionEstimate, PnpError> {
    let (corr, links) = gather_correspondences(query, candidates, map);
    let sol = solve_pnp(&corr, camera, cfg)?;
    let f: Vector3<f64> = sol.pose.forward();
    let direction = map.transform().heading_of(f.x, f.z);
    Ok(DirectionEstimate {
        direction,
        inliers: sol.inliers.len(),
        camera_center: MapPoint3::from_vector(&sol.pose.center()),
        links: sol.inliers.iter().map(|&i| links[i]).collect(),
    })
}

/// Query descriptors as supplied by a client.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub global: Vec<f32>,
    pub locals: Vec<LocalFeature>,
}

/// Retrieval, weighted location with K growth, then PnP direction. A PnP
/// failure leaves `direction` empty but keeps the location.
pub fn localize(
    query: &Query,
    map: &TopometricMap,
    cfg: &LocalizationConfig,
    matcher: &dyn FeatureMatcher,
) -> Result<LocalizationResult, LocalizationError> {
    if map.is_empty() {
        return Err(LocalizationError::EmptyDatabase);
    }
    if let Some(f) = query.locals.iter().find(|f| f.descriptor.len() != map.header().local_dim) {
        return Err(DescriptorError::DimensionMismatch {
            expected: map.header().local_dim,
            got: f.descriptor.len(),
        }
        .into());
    }
    let mut match_cache: HashMap<usize, MatchSet> = HashMap::new();
    let mut candidates_at = |k: usize| -> Result<Vec<Candidate>, LocalizationError> {
        Ok(retrieve_candidates(&query.global, map, k)?
            .into_iter()
            .map(|r| {
                let matches = match_cache
                    .entry(r.index)
                    .or_insert_with(|| {
                        matcher
                            .match_features(&query.locals, &map.images()[r.index].locals)
                            .unwrap_or_default()
                    })
                    .clone();
                Candidate {
                    index: r.index,
                    image_id: r.image_id,
                    distance: r.distance,
                    matches,
                }
            })
            .collect())
    };

    let first = candidates_at(cfg.ladder.k0.max(1))?;
    let (last, location, method, survivors, k_used) = if cfg.exact_match_shortcut && first[0].distance == 0.0 {
        let location = map.images()[first[0].index].location;
        (first, location, Method::WeightedAverage, 1, cfg.ladder.k0.max(1))
    } else {
        let mut last = first;
        let mut failure = None;
        let (step, k_used) = run_ladder(&cfg.ladder, map.len(), |k| {
            if k > last.len() {
                match candidates_at(k) {
                    Ok(c) => last = c,
                    Err(e) => failure = Some(e),
                }
            }
            last.iter()
                .map(|c| (map.images()[c.index].location, c.matches.count()))
                .collect()
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let LadderStep::Located { location, method, weights } = step else {
            unreachable!("run_ladder only returns located steps");
        };
        (last, location, method, weights.len(), k_used)
    };

    let camera = cfg.camera.unwrap_or(*map.camera());
    let mut result = LocalizationResult {
        location,
        direction: None,
        method,
        candidates: last
            .iter()
            .map(|c| CandidateSummary {
                image_id: c.image_id,
                distance: c.distance,
                match_count: c.matches.count(),
                location: map.images()[c.index].location,
            })
            .collect(),
        survivors,
        pnp_inliers: 0,
        k_used,
        camera_center: None,
        pnp_links: Vec::new(),
        direction_error: None,
    };
    match estimate_direction(&query.locals, &last, map, &camera, &cfg.pnp) {
        Ok(est) => {
            result.direction = Some(est.direction);
            result.pnp_inliers = est.inliers;
            result.camera_center = Some(est.camera_center);
            result.pnp_links = est.links;
        }
        Err(e) => result.direction_error = Some(e.to_string()),
    }
    Ok(result)
}
