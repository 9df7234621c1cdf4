//! Procedural indoor world that stands in for the neural descriptor stack.
//!
//! Walls carry landmarks with random local descriptors. An observation at a
//! floor-plan pose projects the unoccluded landmarks through the nominal
//! pinhole and summarizes the view in a global descriptor built from three
//! blocks: random Fourier features of position and heading at a fine scale,
//! random Fourier features of position at a coarse scale, and a sum of
//! per-landmark signature vectors weighted by visibility. Everything is a pure
//! function of the world seed and the pose.

use crate::descriptors::{GlobalDescriptor, LocalFeature};
use crate::geometry::{slice_directions, Direction, FloorPoint, FloorTransform, MapPoint3};
use crate::localization::pnp::{CameraModel, CameraPose};
use crate::localization::Query;
use crate::descriptor_io::DescriptorRecord;
use crate::map::{
    build_reference_database, slice_image_id, BuildReport, FrameObservation, Landmark, MapError, MapHeader,
    SliceObservation, SurveyFile, SurveyLandmark, SurveyPose, TopometricMap,
};
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("pose ({0:.2}, {1:.2}) m lies outside the world")]
    OutOfWorld(f64, f64),
}

/// Wall segment on the ground plane, reconstruction units (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Wall {
    pub const fn new(ax: f64, az: f64, bx: f64, bz: f64) -> Self {
        Self { a: [ax, az], b: [bx, bz] }
    }

    fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    fn closest_point(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = (((p[0] - self.a[0]) * d[0] + (p[1] - self.a[1]) * d[1]) / len2).clamp(0.0, 1.0);
        [self.a[0] + t * d[0], self.a[1] + t * d[1]]
    }

    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let c = self.closest_point(p);
        (p[0] - c[0]).hypot(p[1] - c[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub width: f64,
    pub depth: f64,
    /// Interior walls; the outer rectangle is implied.
    pub interior: Vec<Wall>,
    /// Landmarks per metre of visible wall face.
    pub landmark_density: f64,
    pub wall_height: f64,
    pub camera_height: f64,
    pub max_range: f64,
    pub global_dim: usize,
    pub local_dim: usize,
    pub camera: CameraModel,
    /// Floor-plan pixels per metre.
    pub pixels_per_metre: f64,
    /// Floor-plan pixel of world origin.
    pub origin_px: [f64; 2],
    pub pixel_noise: f64,
    pub descriptor_noise: f64,
    /// Descriptor rotation (radians) per radian of viewing angle.
    pub angle_drift: f64,
    /// Descriptor rotation (radians) per unit of log viewing range.
    pub range_drift: f64,
    pub query_clutter: usize,
    /// Length scales of the fine position/heading and coarse position blocks.
    pub fine_scale_m: f64,
    pub heading_scale: f64,
    pub coarse_scale_m: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 20.0,
            depth: 14.0,
            interior: vec![
                Wall::new(10.0, 0.0, 10.0, 2.0),
                Wall::new(10.0, 4.0, 10.0, 14.0),
                Wall::new(0.0, 7.0, 4.0, 7.0),
                Wall::new(6.0, 7.0, 10.0, 7.0),
                Wall::new(13.0, 9.0, 15.5, 9.0),
                Wall::new(17.5, 9.0, 20.0, 9.0),
            ],
            landmark_density: 30.0,
            wall_height: 3.0,
            camera_height: 1.5,
            max_range: 12.0,
            global_dim: 512,
            local_dim: 32,
            camera: CameraModel::default(),
            pixels_per_metre: 10.0,
            origin_px: [40.0, 30.0],
            pixel_noise: 0.5,
            descriptor_noise: 0.05,
            angle_drift: 1.2,
            range_drift: 0.8,
            query_clutter: 20,
            fine_scale_m: 1.5,
            heading_scale: 0.5,
            coarse_scale_m: 8.0,
            seed: 7,
        }
    }
}

/// Feet per metre.
pub const FEET_PER_METRE: f64 = 3.280_839_895;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldLandmark {
    pub id: u32,
    pub position: MapPoint3,
    pub descriptor: Vec<f32>,
    /// Index of the wall the landmark sits on.
    pub wall: usize,
    /// Outward unit normal of the wall face.
    pub normal: [f64; 2],
}

/// Whether an observation is for the reference database or a user query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Keypoints keep their landmark links.
    Reference,
    /// Unlinked keypoints plus clutter.
    Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub global: GlobalDescriptor,
    pub locals: Vec<LocalFeature>,
}

/// A 360° capture position along the survey path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveyFrame {
    pub frame_id: u32,
    pub position: MapPoint3,
    /// Floor-plan heading of travel.
    pub direction: Direction,
}

#[derive(Debug, Clone)]
struct FourierBlock {
    weights: Vec<Vec<f64>>,
    phases: Vec<f64>,
}

impl FourierBlock {
    fn new(rng: &mut ChaCha8Rng, inputs: usize, features: usize) -> Self {
        let weights = (0..features)
            .map(|_| (0..inputs).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let phases = (0..features).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        Self { weights, phases }
    }

    fn eval(&self, v: &[f64], out: &mut Vec<f64>) {
        let norm = (2.0 / self.phases.len().max(1) as f64).sqrt();
        for (w, b) in self.weights.iter().zip(&self.phases) {
            let dot: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
            out.push(norm * (dot + b).cos());
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: WorldConfig,
    walls: Vec<Wall>,
    landmarks: Vec<WorldLandmark>,
    signatures: Vec<Vec<f32>>,
    /// Per landmark: directions of descriptor drift with viewing angle and
    /// range, and how fast that landmark drifts.
    drifts: Vec<([Vec<f32>; 2], f64)>,
    fine: FourierBlock,
    coarse: FourierBlock,
    signature_dim: usize,
    transform: FloorTransform,
}

impl SyntheticWorld {
    pub fn new(config: WorldConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (w, d) = (config.width, config.depth);
        let mut walls = vec![
            Wall::new(0.0, 0.0, w, 0.0),
            Wall::new(w, 0.0, w, d),
            Wall::new(w, d, 0.0, d),
            Wall::new(0.0, d, 0.0, 0.0),
        ];
        walls.extend(config.interior.iter().copied());

        let mut landmarks = Vec::new();
        for (wi, wall) in walls.iter().enumerate() {
            let dir = [(wall.b[0] - wall.a[0]) / wall.length(), (wall.b[1] - wall.a[1]) / wall.length()];
            let normal = [-dir[1], dir[0]];
            // Outer walls run counter-clockwise, so only their left face is indoors.
            let faces: &[f64] = if wi < 4 { &[1.0] } else { &[1.0, -1.0] };
            for &side in faces {
                let count = (wall.length() * config.landmark_density).round() as usize;
                for _ in 0..count {
                    let t = rng.random_range(0.02..0.98) * wall.length();
                    let h = rng.random_range(0.05..config.wall_height - 0.05);
                    let x = wall.a[0] + dir[0] * t + normal[0] * side * 0.02;
                    let z = wall.a[1] + dir[1] * t + normal[1] * side * 0.02;
                    let descriptor = random_unit(&mut rng, config.local_dim);
                    landmarks.push(WorldLandmark {
                        id: landmarks.len() as u32,
                        position: MapPoint3::new(x, h, z),
                        descriptor,
                        wall: wi,
                        normal: [normal[0] * side, normal[1] * side],
                    });
                }
            }
        }

        let fine_dim = config.global_dim / 4;
        let coarse_dim = config.global_dim / 4;
        let signature_dim = config.global_dim - fine_dim - coarse_dim;
        let fine = FourierBlock::new(&mut rng, 4, fine_dim);
        let coarse = FourierBlock::new(&mut rng, 2, coarse_dim);
        let signatures = landmarks
            .iter()
            .map(|_| (0..signature_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
            .collect();
        let drifts = landmarks
            .iter()
            .map(|lm| {
                let ua = orthonormal(random_unit(&mut rng, config.local_dim), &[&lm.descriptor]);
                let ur = orthonormal(random_unit(&mut rng, config.local_dim), &[&lm.descriptor, &ua]);
                let rate = (0.6 * rng.sample::<f64, _>(StandardNormal)).exp();
                ([ua, ur], rate)
            })
            .collect();

        let s = config.pixels_per_metre;
        let transform = FloorTransform::from_rows([
            [s, config.origin_px[0], 0.0],
            [0.0, config.origin_px[1], s],
        ]);
        Self {
            config,
            walls,
            landmarks,
            signatures,
            drifts,
            fine,
            coarse,
            signature_dim,
            transform,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// Ground truth reconstruction-to-floor-plan transform.
    pub fn transform(&self) -> FloorTransform {
        self.transform
    }

    /// Feet per floor-plan pixel.
    pub fn scale(&self) -> f64 {
        FEET_PER_METRE / self.config.pixels_per_metre
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn landmarks(&self) -> &[WorldLandmark] {
        &self.landmarks
    }

    /// Wall segments in floor-plan pixels.
    pub fn floor_walls(&self) -> Vec<(FloorPoint, FloorPoint)> {
        self.walls
            .iter()
            .map(|w| (self.to_floor(w.a[0], w.a[1]), self.to_floor(w.b[0], w.b[1])))
            .collect()
    }

    pub fn to_floor(&self, x: f64, z: f64) -> FloorPoint {
        self.transform.apply(&MapPoint3::new(x, 1.0, z))
    }

    fn linear_inverse(&self) -> Matrix2<f64> {
        let m = self.transform.matrix();
        Matrix2::new(m[(0, 0)], m[(0, 2)], m[(1, 0)], m[(1, 2)])
            .try_inverse()
            .expect("world transform is invertible")
    }

    /// Reconstruction-frame `(x, z)` of a floor-plan point.
    pub fn to_world(&self, p: FloorPoint) -> [f64; 2] {
        let m = self.transform.matrix();
        let v = self.linear_inverse() * Vector2::new(p.x - m[(0, 1)], p.y - m[(1, 1)]);
        [v.x, v.y]
    }

    /// Reconstruction-frame yaw (radians, +x towards +z) of a floor-plan heading.
    pub fn world_yaw(&self, direction: Direction) -> f64 {
        let r = direction.radians();
        let v = self.linear_inverse() * Vector2::new(r.cos(), r.sin());
        v.y.atan2(v.x)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x > 0.0 && z > 0.0 && x < self.config.width && z < self.config.depth
    }

    /// Distance from a world point to the nearest wall.
    pub fn wall_clearance(&self, x: f64, z: f64) -> f64 {
        self.walls.iter().map(|w| w.distance_to([x, z])).fold(f64::INFINITY, f64::min)
    }

    /// True when the straight ground path between two world points crosses no wall.
    pub fn line_of_sight(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        !self.walls.iter().any(|w| segments_touch(a, b, w.a, w.b))
    }

    /// Serpentine survey of grid points at least `margin` metres from walls.
    /// Grid points closer than that are pushed away from the walls, the way a
    /// surveyor walks along a wall, unless that lands near another point.
    pub fn survey(&self, spacing: f64, margin: f64) -> Vec<SurveyFrame> {
        let cols = (self.config.width / spacing).floor() as usize;
        let rows = (self.config.depth / spacing).floor() as usize;
        let off_x = (self.config.width - (cols.saturating_sub(1)) as f64 * spacing) / 2.0;
        let off_z = (self.config.depth - (rows.saturating_sub(1)) as f64 * spacing) / 2.0;
        let mut slots: Vec<Vec<Option<[f64; 2]>>> = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| {
                        let p = [off_x + c as f64 * spacing, off_z + r as f64 * spacing];
                        (self.wall_clearance(p[0], p[1]) >= margin).then_some(p)
                    })
                    .collect()
            })
            .collect();
        let mut kept: Vec<[f64; 2]> = slots.iter().flatten().flatten().copied().collect();
        for r in 0..rows {
            for c in 0..cols {
                if slots[r][c].is_some() {
                    continue;
                }
                let p = [off_x + c as f64 * spacing, off_z + r as f64 * spacing];
                let Some(q) = self.push_clear(p, margin) else { continue };
                if kept.iter().all(|k| (k[0] - q[0]).hypot(k[1] - q[1]) >= 0.5 * spacing) {
                    kept.push(q);
                    slots[r][c] = Some(q);
                }
            }
        }
        let mut frames = Vec::new();
        for (r, row) in slots.iter().enumerate() {
            let forward = r % 2 == 0;
            for c in 0..cols {
                let c = if forward { c } else { cols - 1 - c };
                let Some([x, z]) = row[c] else { continue };
                let yaw: f64 = if forward { 0.0 } else { std::f64::consts::PI };
                frames.push(SurveyFrame {
                    frame_id: frames.len() as u32,
                    position: MapPoint3::new(x, self.config.camera_height, z),
                    direction: self.transform.heading_of(yaw.cos(), yaw.sin()),
                });
            }
        }
        frames
    }

    /// Moves `p` directly away from its nearest walls until it is `margin`
    /// clear, without crossing a wall.
    fn push_clear(&self, p: [f64; 2], margin: f64) -> Option<[f64; 2]> {
        let mut q = p;
        for _ in 0..4 {
            let (c, d) = self
                .walls
                .iter()
                .map(|w| {
                    let c = w.closest_point(q);
                    (c, (q[0] - c[0]).hypot(q[1] - c[1]))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            if d >= margin - 1e-9 {
                break;
            }
            if d < 1e-9 {
                return None;
            }
            let s = (margin + 1e-6) / d;
            q = [c[0] + (q[0] - c[0]) * s, c[1] + (q[1] - c[1]) * s];
        }
        (self.contains(q[0], q[1]) && self.wall_clearance(q[0], q[1]) >= margin && self.line_of_sight(p, q)).then_some(q)
    }

    /// Indices of landmarks with an unobstructed line from a world position.
    fn unoccluded(&self, x: f64, z: f64) -> Vec<usize> {
        let range2 = self.config.max_range * self.config.max_range;
        self.landmarks
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                let (dx, dz) = (l.position.x - x, l.position.z - z);
                dx * dx + dz * dz <= range2
                    && dx * l.normal[0] + dz * l.normal[1] < 0.0
                    && self.walls.iter().enumerate().all(|(wi, w)| {
                        wi == l.wall || !segments_touch([x, z], [l.position.x, l.position.z], w.a, w.b)
                    })
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Observes the world from a floor-plan pose.
    pub fn observe(&self, location: FloorPoint, direction: Direction, role: Role) -> Result<Observation, SyntheticError> {
        let [x, z] = self.to_world(location);
        if !self.contains(x, z) {
            return Err(SyntheticError::OutOfWorld(x, z));
        }
        let visible = self.unoccluded(x, z);
        Ok(self.render(x, z, direction, role, &visible))
    }

    /// Observes all `m` slices of a frame at `direction + t·θ`, `t = 1..=m`.
    pub fn observe_frame(&self, frame: &SurveyFrame, directions: &[Direction], role: Role) -> Result<Vec<Observation>, SyntheticError> {
        let (x, z) = (frame.position.x, frame.position.z);
        if !self.contains(x, z) {
            return Err(SyntheticError::OutOfWorld(x, z));
        }
        let visible = self.unoccluded(x, z);
        Ok(directions.iter().map(|&d| self.render(x, z, d, role, &visible)).collect())
    }

    /// Landmark descriptor as seen from `(x, z)`. It rotates away from the
    /// base descriptor by angles proportional to the viewing angle off the
    /// wall normal and to the log of the range.
    fn viewed_descriptor(&self, li: usize, x: f64, z: f64) -> Vec<f32> {
        let lm = &self.landmarks[li];
        let (dx, dz) = (x - lm.position.x, z - lm.position.z);
        let range = (dx * dx + dz * dz).sqrt().max(0.05);
        let along = dx * -lm.normal[1] + dz * lm.normal[0];
        let off = dx * lm.normal[0] + dz * lm.normal[1];
        let ([ua, ur], rate) = &self.drifts[li];
        let pa = rate * self.config.angle_drift * along.atan2(off);
        let pr = rate * self.config.range_drift * range.ln();
        let (cb, ca, cr) = (pa.cos() * pr.cos(), pa.sin(), pa.cos() * pr.sin());
        lm.descriptor
            .iter()
            .zip(ua.iter().zip(ur))
            .map(|(&b, (&u, &v))| (cb * b as f64 + ca * u as f64 + cr * v as f64) as f32)
            .collect()
    }

    fn render(&self, x: f64, z: f64, direction: Direction, role: Role, candidates: &[usize]) -> Observation {
        let cfg = &self.config;
        let yaw = self.world_yaw(direction);
        let pose = CameraPose::level(Vector3::new(x, cfg.camera_height, z), yaw);
        let mut rng = ChaCha8Rng::seed_from_u64(pose_seed(cfg.seed, x, z, yaw, role));

        let mut locals = Vec::new();
        let mut signature = vec![0.0f64; self.signature_dim];
        for &li in candidates {
            let lm = &self.landmarks[li];
            let pc = pose.transform(&lm.position.to_vector());
            let Some(px) = cfg.camera.project_camera(&pc) else { continue };
            if !cfg.camera.contains(&px) {
                continue;
            }
            let weight = 1.0 / (1.0 + pc.norm());
            for (s, v) in signature.iter_mut().zip(&self.signatures[li]) {
                *s += weight * *v as f64;
            }
            let nu = px.x + cfg.pixel_noise * rng.sample::<f64, _>(StandardNormal);
            let nv = px.y + cfg.pixel_noise * rng.sample::<f64, _>(StandardNormal);
            let keypoint = [
                nu.clamp(0.0, cfg.camera.width as f64 - 1e-3) as f32,
                nv.clamp(0.0, cfg.camera.height as f64 - 1e-3) as f32,
            ];
            let descriptor = perturb(&mut rng, &self.viewed_descriptor(li, x, z), cfg.descriptor_noise);
            let landmark_id = match role {
                Role::Reference => Some(lm.id),
                Role::Query => None,
            };
            locals.push(LocalFeature { keypoint, descriptor, landmark_id });
        }
        if role == Role::Query {
            for _ in 0..cfg.query_clutter {
                let keypoint = [
                    rng.random_range(0.0..cfg.camera.width as f32),
                    rng.random_range(0.0..cfg.camera.height as f32),
                ];
                let descriptor = random_unit(&mut rng, cfg.local_dim);
                locals.push(LocalFeature { keypoint, descriptor, landmark_id: None });
            }
        }

        let mut global = Vec::with_capacity(cfg.global_dim);
        let h = cfg.heading_scale;
        self.fine.eval(
            &[x / cfg.fine_scale_m, z / cfg.fine_scale_m, yaw.cos() / h, yaw.sin() / h],
            &mut global,
        );
        self.coarse.eval(&[x / cfg.coarse_scale_m, z / cfg.coarse_scale_m], &mut global);
        let snorm = signature.iter().map(|v| v * v).sum::<f64>().sqrt();
        if snorm > 0.0 {
            global.extend(signature.iter().map(|v| v / snorm));
        } else {
            global.extend(std::iter::repeat_n(0.0, self.signature_dim));
        }
        let norm = global.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let global = GlobalDescriptor(global.iter().map(|v| (v / norm) as f32).collect());
        Observation { global, locals }
    }
}

/// Survey and slicing parameters for [`SyntheticWorld::build_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyPlan {
    pub spacing: f64,
    pub margin: f64,
    pub m: usize,
    pub theta: f64,
    pub min_features: usize,
}

impl Default for SurveyPlan {
    fn default() -> Self {
        Self {
            spacing: 0.75,
            margin: 0.4,
            m: 18,
            theta: 20.0,
            min_features: 100,
        }
    }
}

impl SyntheticWorld {
    /// Frame observations for a survey, one reference slice per direction.
    pub fn frame_observations(&self, frames: &[SurveyFrame], m: usize, theta: f64) -> Result<Vec<FrameObservation>, MapError> {
        frames
            .iter()
            .map(|f| {
                let dirs = slice_directions(f.direction, m, theta)?;
                let slices = self
                    .observe_frame(f, &dirs, Role::Reference)
                    .expect("survey frames lie inside the world")
                    .into_iter()
                    .map(|o| SliceObservation { global: o.global, locals: o.locals })
                    .collect();
                Ok(FrameObservation {
                    frame_id: f.frame_id,
                    position: f.position,
                    direction: f.direction,
                    slices,
                })
            })
            .collect()
    }

    pub fn map_landmarks(&self) -> Vec<Landmark> {
        self.landmarks
            .iter()
            .map(|l| Landmark {
                id: l.id,
                position: l.position,
                floor_position: self.transform.apply(&l.position),
            })
            .collect()
    }

    pub fn map_header(&self, name: &str) -> MapHeader {
        MapHeader {
            name: name.to_string(),
            transform: self.transform,
            scale: self.scale(),
            floor_plan: None,
            camera: self.config.camera,
            global_dim: self.config.global_dim,
            local_dim: self.config.local_dim,
        }
    }

    /// Surveys the world and builds a map with its walls as boundaries.
    pub fn build_map(&self, plan: &SurveyPlan) -> Result<(TopometricMap, Vec<SurveyFrame>, BuildReport), MapError> {
        let frames = self.survey(plan.spacing, plan.margin);
        let obs = self.frame_observations(&frames, plan.m, plan.theta)?;
        let (images, report) = build_reference_database(&obs, plan.m, plan.theta, plan.min_features, &self.transform)?;
        let mut map = TopometricMap::new(self.map_header("synthetic"), images, self.map_landmarks())?;
        let walls: Vec<_> = self
            .floor_walls()
            .into_iter()
            .map(|(a, b)| crate::map::NewBoundary { a, b, source: crate::map::BoundarySource::Extracted })
            .collect();
        map.edit_boundaries(&walls, &[])?;
        Ok((map, frames, report))
    }

    /// The survey as an external reconstruction would export it: poses,
    /// landmarks and per-slice descriptors.
    pub fn export_survey(&self, plan: &SurveyPlan) -> Result<(SurveyFile, Vec<DescriptorRecord>), MapError> {
        let frames = self.survey(plan.spacing, plan.margin);
        let obs = self.frame_observations(&frames, plan.m, plan.theta)?;
        let records = obs
            .into_iter()
            .flat_map(|f| {
                let id = f.frame_id;
                f.slices.into_iter().enumerate().map(move |(t, s)| DescriptorRecord {
                    image_id: slice_image_id(id, plan.m, t + 1),
                    global: s.global,
                    locals: s.locals,
                })
            })
            .collect();
        let poses = frames
            .iter()
            .map(|f| SurveyPose {
                frame_id: f.frame_id,
                position: f.position,
                direction: f.direction,
            })
            .collect();
        let landmarks = self
            .landmarks
            .iter()
            .map(|l| SurveyLandmark { id: l.id, position: l.position })
            .collect();
        Ok((SurveyFile::new(poses, landmarks), records))
    }

    /// Query descriptors observed at a floor-plan pose.
    pub fn query(&self, location: FloorPoint, direction: Direction) -> Result<Query, SyntheticError> {
        let o = self.observe(location, direction, Role::Query)?;
        Ok(Query { global: o.global.0, locals: o.locals })
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter().map(|a| (a / n) as f32).collect()
}

/// `v` with its components along the unit vectors `basis` removed, normalized.
fn orthonormal(v: Vec<f32>, basis: &[&[f32]]) -> Vec<f32> {
    let mut w: Vec<f64> = v.iter().map(|&a| a as f64).collect();
    for b in basis {
        let dot: f64 = w.iter().zip(b.iter()).map(|(a, b)| a * *b as f64).sum();
        for (a, b) in w.iter_mut().zip(b.iter()) {
            *a -= dot * *b as f64;
        }
    }
    let n = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    w.iter().map(|a| (a / n) as f32).collect()
}

fn perturb(rng: &mut ChaCha8Rng, base: &[f32], sigma: f64) -> Vec<f32> {
    let v: Vec<f64> = base
        .iter()
        .map(|&b| b as f64 + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter().map(|a| (a / n) as f32).collect()
}

fn pose_seed(seed: u64, x: f64, z: f64, yaw: f64, role: Role) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x.to_bits(), z.to_bits(), yaw.to_bits(), role as u64] {
        h ^= v;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_touch(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0 && !(d1 == 0.0 && d2 == 0.0 && d3 == 0.0 && d4 == 0.0)
}
