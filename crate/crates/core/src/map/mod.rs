//! The topometric map: reference images, landmarks, boundaries and
//! destinations sharing one floor-plan frame.
//!
//! Images and landmarks sit behind `Arc` so a map can be cloned cheaply,
//! mutated, and published as a new version while readers keep the old one.

mod raster;
mod store;
mod survey;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{GlobalDescriptor, LocalFeature};
use crate::geometry::{
    slice_directions, Direction, FloorPoint, FloorTransform, GeometryError, MapPoint3,
};
use crate::localization::pnp::CameraModel;
use crate::localization::{LadderConfig, LocalizationResult, Method};

pub use raster::{extract_boundaries, Raster, DARK_THRESHOLD};
pub use survey::{parse_survey_json, SurveyFile, SurveyLandmark, SurveyPose, SURVEY_FORMAT, SURVEY_FORMAT_VERSION};
pub use store::{load_map, parse_map_json, save_map, MapFileBody, MapFormatError, MAP_FORMAT, MAP_FORMAT_VERSION};

pub type ImageId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frame {frame} has {got} slices, expected {expected}")]
    SliceCount { frame: u32, expected: usize, got: usize },
    #[error("unknown boundary {0}")]
    UnknownBoundary(u32),
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("duplicate image id {0}")]
    DuplicateImage(ImageId),
    #[error("destination name {0:?} already used")]
    DuplicateName(String),
    #[error("destination name must not be empty")]
    EmptyName,
    #[error("boundary has zero length or non-finite endpoints")]
    DegenerateBoundary,
    #[error("image {image} links missing landmark {landmark}")]
    DanglingLandmark { image: ImageId, landmark: u32 },
    #[error("image {image}: descriptor dimension {got}, map uses {expected}")]
    Dimension { image: ImageId, expected: usize, got: usize },
    #[error("raster is empty")]
    EmptyRaster,
    #[error("scale must be positive and finite")]
    InvalidScale,
}

/// Evidence recorded when a query is admitted into the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub k_used: usize,
    pub survivors: usize,
    pub match_total: usize,
    pub pnp_inliers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageOrigin {
    Mapped,
    Evolved { evidence: Evidence },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceImage {
    pub id: ImageId,
    pub frame_id: u32,
    /// Slice number `t` in `1..=m`; 0 for evolved single views.
    pub slice_index: u32,
    /// Capture position in the reconstruction frame.
    pub position: MapPoint3,
    pub location: FloorPoint,
    pub direction: Direction,
    #[serde(skip)]
    pub global: GlobalDescriptor,
    #[serde(skip)]
    pub locals: Vec<LocalFeature>,
    pub origin: ImageOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub position: MapPoint3,
    pub floor_position: FloorPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    Extracted,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub id: u32,
    pub a: FloorPoint,
    pub b: FloorPoint,
    pub source: BoundarySource,
}

impl Boundary {
    pub fn length(&self) -> f64 {
        self.a.distance(&self.b)
    }
}

/// Boundary to be added; the map assigns its id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewBoundary {
    pub a: FloorPoint,
    pub b: FloorPoint,
    pub source: BoundarySource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Destination {
    pub name: String,
    pub image_id: ImageId,
}

/// Boundary changes between two consecutive map versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDelta {
    pub from_version: u64,
    pub to_version: u64,
    pub added: Vec<Boundary>,
    pub removed: Vec<Boundary>,
}

/// Descriptors of one perspective slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceObservation {
    pub global: GlobalDescriptor,
    pub locals: Vec<LocalFeature>,
}

/// One equirectangular frame: its reconstructed position, heading, and the
/// descriptors of its `m` slices in slice order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_id: u32,
    pub position: MapPoint3,
    pub direction: Direction,
    pub slices: Vec<SliceObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub frames: usize,
    pub slices: usize,
    pub kept: usize,
    pub dropped: usize,
}

/// Image id of slice `t` (1-based) of a frame.
pub fn slice_image_id(frame_id: u32, m: usize, t: usize) -> ImageId {
    frame_id * m as u32 + (t as u32 - 1)
}

/// Slices every frame into `m` views spaced by `theta` and drops views with
/// fewer than `min_features` keypoints. Locations are projected with
/// `transform`.
pub fn build_reference_database(
    frames: &[FrameObservation],
    m: usize,
    theta: f64,
    min_features: usize,
    transform: &FloorTransform,
) -> Result<(Vec<ReferenceImage>, BuildReport), MapError> {
    let mut report = BuildReport {
        frames: frames.len(),
        ..BuildReport::default()
    };
    let mut images = Vec::new();
    for frame in frames {
        let directions = slice_directions(frame.direction, m, theta)?;
        if frame.slices.len() != m {
            return Err(MapError::SliceCount {
                frame: frame.frame_id,
                expected: m,
                got: frame.slices.len(),
            });
        }
        let location = transform.apply(&frame.position);
        for (t, (slice, direction)) in frame.slices.iter().zip(directions).enumerate() {
            report.slices += 1;
            if slice.locals.len() < min_features {
                report.dropped += 1;
                continue;
            }
            images.push(ReferenceImage {
                id: slice_image_id(frame.frame_id, m, t + 1),
                frame_id: frame.frame_id,
                slice_index: t as u32 + 1,
                position: frame.position,
                location,
                direction,
                global: slice.global.clone(),
                locals: slice.locals.clone(),
                origin: ImageOrigin::Mapped,
            });
        }
    }
    report.kept = images.len();
    Ok((images, report))
}

/// Projects frame positions and landmark positions onto the floor plan.
pub fn project_map(
    transform: &FloorTransform,
    positions: &[MapPoint3],
    landmarks: &[MapPoint3],
) -> (Vec<FloorPoint>, Vec<FloorPoint>) {
    (
        positions.iter().map(|p| transform.apply(p)).collect(),
        landmarks.iter().map(|p| transform.apply(p)).collect(),
    )
}

/// Static map properties supplied at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapHeader {
    pub name: String,
    pub transform: FloorTransform,
    /// Feet per floor-plan pixel.
    pub scale: f64,
    /// Grayscale PNG, relative to the map directory.
    pub floor_plan: Option<String>,
    pub camera: CameraModel,
    pub global_dim: usize,
    pub local_dim: usize,
}

/// Admission rule for map evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionGate {
    pub min_inliers: usize,
    /// K the ladder must have succeeded at.
    pub initial_k: usize,
}

impl Default for EvolutionGate {
    fn default() -> Self {
        Self {
            min_inliers: 50,
            initial_k: LadderConfig::default().k0,
        }
    }
}

impl EvolutionGate {
    pub fn admits(&self, result: &LocalizationResult) -> bool {
        result.method == Method::WeightedAverage
            && result.k_used <= self.initial_k
            && result.direction.is_some()
            && result.camera_center.is_some()
            && result.pnp_inliers >= self.min_inliers
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopometricMap {
    header: MapHeader,
    version: u64,
    images: Vec<Arc<ReferenceImage>>,
    image_index: HashMap<ImageId, usize>,
    landmarks: Arc<Vec<Landmark>>,
    boundaries: Vec<Boundary>,
    next_boundary_id: u32,
    destinations: Vec<Destination>,
}

impl TopometricMap {
    /// Builds a map at version 1 after checking dimensions and landmark links.
    pub fn new(header: MapHeader, images: Vec<ReferenceImage>, mut landmarks: Vec<Landmark>) -> Result<Self, MapError> {
        if !(header.scale.is_finite() && header.scale > 0.0) {
            return Err(MapError::InvalidScale);
        }
        landmarks.sort_by_key(|l| l.id);
        let mut map = Self {
            header,
            version: 1,
            images: Vec::with_capacity(images.len()),
            image_index: HashMap::with_capacity(images.len()),
            landmarks: Arc::new(landmarks),
            boundaries: Vec::new(),
            next_boundary_id: 0,
            destinations: Vec::new(),
        };
        for image in images {
            map.check_image(&image)?;
            map.image_index.insert(image.id, map.images.len());
            map.images.push(Arc::new(image));
        }
        Ok(map)
    }

    fn check_image(&self, image: &ReferenceImage) -> Result<(), MapError> {
        if self.image_index.contains_key(&image.id) {
            return Err(MapError::DuplicateImage(image.id));
        }
        if image.global.dim() != self.header.global_dim {
            return Err(MapError::Dimension {
                image: image.id,
                expected: self.header.global_dim,
                got: image.global.dim(),
            });
        }
        for f in &image.locals {
            if f.descriptor.len() != self.header.local_dim {
                return Err(MapError::Dimension {
                    image: image.id,
                    expected: self.header.local_dim,
                    got: f.descriptor.len(),
                });
            }
            if let Some(l) = f.landmark_id {
                if self.landmark(l).is_none() {
                    return Err(MapError::DanglingLandmark { image: image.id, landmark: l });
                }
            }
        }
        Ok(())
    }

    pub fn header(&self) -> &MapHeader {
        &self.header
    }

    pub fn name(&self) -> &str {
        &self.header.name
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn transform(&self) -> &FloorTransform {
        &self.header.transform
    }

    pub fn scale(&self) -> f64 {
        self.header.scale
    }

    pub fn camera(&self) -> &CameraModel {
        &self.header.camera
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Arc<ReferenceImage>] {
        &self.images
    }

    pub fn image(&self, id: ImageId) -> Option<&ReferenceImage> {
        self.image_index.get(&id).map(|&i| &*self.images[i])
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn landmark(&self, id: u32) -> Option<&Landmark> {
        self.landmarks
            .binary_search_by_key(&id, |l| l.id)
            .ok()
            .map(|i| &self.landmarks[i])
    }

    pub fn boundaries(&self) -> &[Boundary] {
        &self.boundaries
    }

    pub fn destinations(&self) -> &[Destination] {
        &self.destinations
    }

    pub fn destination(&self, name: &str) -> Option<&Destination> {
        self.destinations.iter().find(|d| d.name == name)
    }

    /// Copy restricted to the images accepted by `keep`; boundaries,
    /// landmarks and destinations whose image survives are retained.
    pub fn subset(&self, mut keep: impl FnMut(&ReferenceImage) -> bool) -> Self {
        let images: Vec<Arc<ReferenceImage>> = self.images.iter().filter(|i| keep(i)).cloned().collect();
        let image_index = images.iter().enumerate().map(|(i, img)| (img.id, i)).collect::<HashMap<_, _>>();
        let destinations = self
            .destinations
            .iter()
            .filter(|d| image_index.contains_key(&d.image_id))
            .cloned()
            .collect();
        Self {
            header: self.header.clone(),
            version: self.version,
            images,
            image_index,
            landmarks: Arc::clone(&self.landmarks),
            boundaries: self.boundaries.clone(),
            next_boundary_id: self.next_boundary_id,
            destinations,
        }
    }

    /// Replaces the floor transform and re-projects every image and landmark.
    pub fn realign(&mut self, transform: FloorTransform) {
        self.header.transform = transform;
        for img in &mut self.images {
            let location = transform.apply(&img.position);
            Arc::make_mut(img).location = location;
        }
        for l in Arc::make_mut(&mut self.landmarks) {
            l.floor_position = transform.apply(&l.position);
        }
        self.version += 1;
    }

    /// Applies additions and deletions as one atomic edit.
    pub fn edit_boundaries(&mut self, additions: &[NewBoundary], deletions: &[u32]) -> Result<BoundaryDelta, MapError> {
        let unique: BTreeSet<u32> = deletions.iter().copied().collect();
        for &id in &unique {
            if !self.boundaries.iter().any(|b| b.id == id) {
                return Err(MapError::UnknownBoundary(id));
            }
        }
        for add in additions {
            if !(add.a.is_finite() && add.b.is_finite()) || add.a.distance(&add.b) == 0.0 {
                return Err(MapError::DegenerateBoundary);
            }
        }
        let from_version = self.version;
        let (removed, kept): (Vec<Boundary>, Vec<Boundary>) =
            self.boundaries.iter().partition(|b| unique.contains(&b.id));
        self.boundaries = kept;
        let mut added = Vec::with_capacity(additions.len());
        for add in additions {
            let b = Boundary {
                id: self.next_boundary_id,
                a: add.a,
                b: add.b,
                source: add.source,
            };
            self.next_boundary_id += 1;
            self.boundaries.push(b);
            added.push(b);
        }
        self.version += 1;
        Ok(BoundaryDelta {
            from_version,
            to_version: self.version,
            added,
            removed,
        })
    }

    pub fn define_destination(&mut self, image_id: ImageId, name: &str) -> Result<u64, MapError> {
        if name.trim().is_empty() {
            return Err(MapError::EmptyName);
        }
        if self.image(image_id).is_none() {
            return Err(MapError::UnknownImage(image_id));
        }
        if self.destination(name).is_some() {
            return Err(MapError::DuplicateName(name.to_string()));
        }
        self.destinations.push(Destination {
            name: name.to_string(),
            image_id,
        });
        self.version += 1;
        Ok(self.version)
    }

    fn next_image_id(&self) -> ImageId {
        self.images.iter().map(|i| i.id).max().map_or(0, |m| m + 1)
    }

    /// Admits a localized query as a new single-view reference image when
    /// `gate` accepts its evidence. Query keypoints that were PnP inliers are
    /// linked to their landmarks. Returns the new image id, or `None` when
    /// rejected.
    pub fn evolve(
        &mut self,
        global: &GlobalDescriptor,
        locals: &[LocalFeature],
        result: &LocalizationResult,
        gate: &EvolutionGate,
    ) -> Result<Option<ImageId>, MapError> {
        if !gate.admits(result) {
            return Ok(None);
        }
        let (Some(direction), Some(center)) = (result.direction, result.camera_center) else {
            return Ok(None);
        };
        let mut locals = locals.to_vec();
        for f in &mut locals {
            f.landmark_id = None;
        }
        for &(qi, landmark) in &result.pnp_links {
            if let Some(f) = locals.get_mut(qi as usize) {
                f.landmark_id = Some(landmark);
            }
        }
        let id = self.next_image_id();
        let image = ReferenceImage {
            id,
            frame_id: u32::MAX,
            slice_index: 0,
            position: center,
            location: result.location,
            direction,
            global: global.clone(),
            locals,
            origin: ImageOrigin::Evolved {
                evidence: Evidence {
                    k_used: result.k_used,
                    survivors: result.survivors,
                    match_total: result.candidates.iter().map(|c| c.match_count).sum(),
                    pnp_inliers: result.pnp_inliers,
                },
            },
        };
        self.check_image(&image)?;
        self.image_index.insert(id, self.images.len());
        self.images.push(Arc::new(image));
        self.version += 1;
        Ok(Some(id))
    }

    /// Referential integrity: every destination and landmark link resolves.
    pub fn check_integrity(&self) -> Result<(), MapError> {
        for d in &self.destinations {
            if self.image(d.image_id).is_none() {
                return Err(MapError::UnknownImage(d.image_id));
            }
        }
        for img in &self.images {
            for f in &img.locals {
                if let Some(l) = f.landmark_id {
                    if self.landmark(l).is_none() {
                        return Err(MapError::DanglingLandmark { image: img.id, landmark: l });
                    }
                }
            }
        }
        Ok(())
    }
}
