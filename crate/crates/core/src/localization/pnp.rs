//! Camera pose from 2D-3D correspondences.
//!
//! A three-point solver (Persson and Nordberg's lambda twist construction)
//! generates hypotheses inside a seeded consensus loop; the winning pose is
//! polished with Levenberg-Marquardt on the reprojection error of its inliers.
//!
//! Poses map world points into the camera frame: `x_c = R x_w + t`, camera
//! looking down +z with +x right and +y down.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("no pose reached {required} inliers (best {best})")]
    ConsensusFailed { best: usize, required: usize },
}

/// Nominal pinhole with square pixels and a centered principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Horizontal field of view, degrees.
    pub hfov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            hfov_deg: 75.0,
            width: 640,
            height: 360,
        }
    }
}

impl CameraModel {
    pub fn is_valid(&self) -> bool {
        self.hfov_deg > 0.0 && self.hfov_deg < 180.0 && self.width > 0 && self.height > 0
    }

    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Pixel of a camera-frame point, `None` behind the camera.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 1e-9 {
            return None;
        }
        let f = self.focal();
        Some(self.principal_point() + Vector2::new(f * p.x / p.z, f * p.y / p.z))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Unit bearing vector through a pixel.
    pub fn bearing(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let c = self.principal_point();
        Vector3::new(px.x - c.x, px.y - c.y, self.focal()).normalize()
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Optical axis expressed in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    /// Builds the pose of a level camera at `center` whose optical axis has
    /// horizontal heading `yaw` measured from world +x towards world +z, with
    /// world +y up.
    pub fn level(center: Vector3<f64>, yaw_rad: f64) -> Self {
        let (s, c) = yaw_rad.sin_cos();
        // rows: camera right, camera down, camera forward
        let m = Matrix3::new(-s, 0.0, c, 0.0, -1.0, 0.0, c, 0.0, s);
        let rotation = Rotation3::from_matrix_unchecked(m);
        let translation = -(rotation * center);
        Self { rotation, translation }
    }
}

/// Pixel observation of a known 3D point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpConfig {
    pub max_iterations: usize,
    /// Reprojection error (pixels) below which a correspondence is an inlier.
    pub inlier_threshold_px: f64,
    pub min_consensus: usize,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_threshold_px: 4.0,
            min_consensus: 12,
            confidence: 0.9999,
            refine_iterations: 30,
            seed: 0x5eed_0f_9a7e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: CameraPose,
    /// Indices into the correspondence slice, ascending.
    pub inliers: Vec<usize>,
    /// RMS reprojection error over the inliers, pixels.
    pub rms_px: f64,
}

/// Reprojection error in pixels, infinite for points behind the camera.
pub fn reprojection_error(camera: &CameraModel, pose: &CameraPose, c: &Correspondence) -> f64 {
    match camera.project_camera(&pose.transform(&c.point)) {
        Some(px) => (px - c.pixel).norm(),
        None => f64::INFINITY,
    }
}

/// Robust pose from correspondences.
pub fn solve_pnp(
    correspondences: &[Correspondence],
    camera: &CameraModel,
    config: &PnpConfig,
) -> Result<PnpSolution, PnpError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(PnpError::InsufficientCorrespondences(n));
    }
    let required = config.min_consensus.min(n).max(4);
    let bearings: Vec<Vector3<f64>> = correspondences.iter().map(|c| camera.bearing(&c.pixel)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, f64, CameraPose)> = None;
    let mut bound = config.max_iterations;
    let mut iter = 0;
    while iter < bound.min(config.max_iterations) {
        iter += 1;
        let idx = sample(&mut rng, n, 3);
        let (a, b, c) = (idx.index(0), idx.index(1), idx.index(2));
        let points = [correspondences[a].point, correspondences[b].point, correspondences[c].point];
        let rays = [bearings[a], bearings[b], bearings[c]];
        for pose in solve_p3p(&points, &rays) {
            let (count, score) = score_pose(camera, &pose, correspondences, config.inlier_threshold_px);
            let better = match &best {
                None => true,
                Some((bc, bs, _)) => count > *bc || (count == *bc && score < *bs),
            };
            if better {
                best = Some((count, score, pose));
                let w = count as f64 / n as f64;
                let denom = (1.0 - w.powi(3)).ln();
                if denom < 0.0 {
                    let needed = ((1.0 - config.confidence).ln() / denom).ceil();
                    if needed.is_finite() {
                        bound = (needed as usize).max(16);
                    }
                } else if w >= 1.0 {
                    bound = iter;
                }
            }
        }
    }

    let Some((count, _, mut pose)) = best else {
        return Err(PnpError::ConsensusFailed { best: 0, required });
    };
    if count < required {
        return Err(PnpError::ConsensusFailed { best: count, required });
    }

    let mut inliers = inlier_set(camera, &pose, correspondences, config.inlier_threshold_px);
    for _ in 0..4 {
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| correspondences[i]).collect();
        pose = refine_pose(&pose, &subset, camera, config.refine_iterations);
        let next = inlier_set(camera, &pose, correspondences, config.inlier_threshold_px);
        if next == inliers {
            break;
        }
        inliers = next;
    }
    if inliers.len() < required {
        return Err(PnpError::ConsensusFailed {
            best: inliers.len(),
            required,
        });
    }
    let sq: f64 = inliers
        .iter()
        .map(|&i| reprojection_error(camera, &pose, &correspondences[i]).powi(2))
        .sum();
    Ok(PnpSolution {
        pose,
        rms_px: (sq / inliers.len() as f64).sqrt(),
        inliers,
    })
}

fn score_pose(camera: &CameraModel, pose: &CameraPose, cs: &[Correspondence], threshold: f64) -> (usize, f64) {
    let mut count = 0;
    let mut score = 0.0;
    for c in cs {
        let e = reprojection_error(camera, pose, c);
        if e < threshold {
            count += 1;
            score += e * e;
        } else {
            score += threshold * threshold;
        }
    }
    (count, score)
}

fn inlier_set(camera: &CameraModel, pose: &CameraPose, cs: &[Correspondence], threshold: f64) -> Vec<usize> {
    cs.iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error(camera, pose, c) < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Levenberg-Marquardt on the summed squared reprojection error.
pub fn refine_pose(
    initial: &CameraPose,
    correspondences: &[Correspondence],
    camera: &CameraModel,
    iterations: usize,
) -> CameraPose {
    let f = camera.focal();
    let cost = |pose: &CameraPose| -> f64 {
        correspondences
            .iter()
            .map(|c| reprojection_error(camera, pose, c).powi(2))
            .sum()
    };
    let mut pose = *initial;
    let mut current = cost(&pose);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in correspondences {
            let pc = pose.transform(&c.point);
            if pc.z <= 1e-9 {
                continue;
            }
            let px = camera.principal_point() + Vector2::new(f * pc.x / pc.z, f * pc.y / pc.z);
            let r = px - c.pixel;
            let iz = 1.0 / pc.z;
            let dproj = nalgebra::Matrix2x3::new(
                f * iz,
                0.0,
                -f * pc.x * iz * iz,
                0.0,
                f * iz,
                -f * pc.y * iz * iz,
            );
            // d(pc)/d(omega) = -[pc]x, d(pc)/d(upsilon) = I
            let skew = pc.cross_matrix();
            let mut dp = nalgebra::Matrix3x6::<f64>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let Some(delta) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let rot = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
            let candidate = CameraPose {
                rotation: rot * pose.rotation,
                translation: rot * pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            };
            let c = cost(&candidate);
            if c < current {
                let step = delta.norm();
                pose = candidate;
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = step > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || current < 1e-24 {
            break;
        }
    }
    pose.rotation.renormalize();
    pose
}

/// Up to four poses consistent with three world points and their unit
/// bearing vectors.
pub fn solve_p3p(points: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<CameraPose> {
    let [x1, x2, x3] = *points;
    let y1 = bearings[0].normalize();
    let y2 = bearings[1].normalize();
    let y3 = bearings[2].normalize();

    let d12 = x1 - x2;
    let d13 = x1 - x3;
    let d23 = x2 - x3;
    let d12xd13 = d12.cross(&d13);
    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();
    if d12xd13.norm_squared() < 1e-18 * a12.max(a13).max(1e-300).powi(2) {
        return Vec::new();
    }

    let c12 = y1.dot(&y2);
    let c23 = y2.dot(&y3);
    let c31 = y3.dot(&y1);
    let blob = c12 * c23 * c31 - 1.0;
    let s12 = 1.0 - c12 * c12;
    let s23 = 1.0 - c23 * c23;
    let s31 = 1.0 - c31 * c31;
    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    // cubic whose root makes D1 - gamma * D2 singular
    let p3 = a13 * (a23 * s31 - a13 * s23);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23 + a23 * (a23 - a12) * s31;
    let p1 = a23 * (a13 - a23) * s12 - a12 * a12 * s23 - 2.0 * a12 * (blob * a23 + a13 * s23);
    let p0 = a12 * (a12 * s23 - a23 * s12);
    if p3.abs() < 1e-300 {
        return Vec::new();
    }
    let g = cubic_root(p2 / p3, p1 / p3, p0 / p3);

    let d0 = Matrix3::new(
        a23 * (1.0 - g),
        -(a23 * c12),
        a23 * c31 * g,
        -(a23 * c12),
        a23 - a12 + a13 * g,
        -c23 * (a13 * g - a12),
        a23 * c31 * g,
        -c23 * (a13 * g - a12),
        g * (a13 - a23) - a12,
    );
    let (evec, eval) = singular_eigen(&d0);
    if eval.0 == 0.0 {
        return Vec::new();
    }
    let ratio = (-eval.1 / eval.0).max(0.0).sqrt();

    let mut lambdas: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for s in [ratio, -ratio] {
        let w2 = 1.0 / (s * evec[(0, 1)] - evec[(0, 0)]);
        let w0 = w2 * (evec[(1, 0)] - s * evec[(1, 1)]);
        let w1 = w2 * (evec[(2, 0)] - s * evec[(2, 1)]);
        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        if !(b * b - 4.0 * c >= 0.0) {
            continue;
        }
        let Some((t1, t2)) = quadratic_roots(b, c) else {
            continue;
        };
        for tau in [t1, t2] {
            if tau <= 0.0 {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d <= 0.0 {
                continue;
            }
            let l2 = d.sqrt();
            let l3 = tau * l2;
            let l1 = w0 * l2 + w1 * l3;
            if l1 >= 0.0 && l1.is_finite() {
                lambdas.push(Vector3::new(l1, l2, l3));
            }
        }
    }

    let xm = Matrix3::from_columns(&[d12, d13, d12xd13]);
    let Some(xm_inv) = xm.try_inverse() else {
        return Vec::new();
    };
    lambdas
        .into_iter()
        .filter_map(|lambda| {
            let l = refine_depths(lambda, a12, a13, a23, b12, b13, b23);
            let r1 = l[0] * y1;
            let r2 = l[1] * y2;
            let r3 = l[2] * y3;
            let e1 = r1 - r2;
            let e2 = r1 - r3;
            let ym = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
            let r = ym * xm_inv;
            if !r.iter().all(|v| v.is_finite()) {
                return None;
            }
            let rotation = nearest_rotation(&r)?;
            let translation = r1 - rotation * x1;
            Some(CameraPose { rotation, translation })
        })
        .collect()
}

/// Closest rotation to `m` in the Frobenius norm, `U diag(1, 1, det) Vᵀ`.
fn nearest_rotation(m: &Matrix3<f64>) -> Option<Rotation3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (u * v_t).determinant().signum();
    let r = u * fix * v_t;
    r.iter().all(|x| x.is_finite()).then(|| Rotation3::from_matrix_unchecked(r))
}

/// Roots of `r^2 + b r + c`, computed without cancellation.
fn quadratic_roots(b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let y = disc.sqrt();
    if b < 0.0 {
        Some((0.5 * (-b + y), 0.5 * (-b - y)))
    } else {
        Some((2.0 * c / (-b + y), 2.0 * c / (-b - y)))
    }
}

/// One real root of `r^3 + b r^2 + c r + d`, picked where the cubic is steep.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = ((t1 + b) * t1 + c) * t1 + d;
        if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k = ((t2 + b) * t2 + c) * t2 + d;
            r0 = t2 + (-k / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if ((3.0 * r0 + 2.0 * b) * r0 + c).abs() < 1e-4 {
            r0 += 1.0;
        }
    }
    for i in 0..50 {
        let fx = ((r0 + b) * r0 + c) * r0 + d;
        if i >= 7 && fx.abs() <= 1e-13 {
            break;
        }
        let fpx = (3.0 * r0 + 2.0 * b) * r0 + c;
        if fpx == 0.0 {
            break;
        }
        r0 -= fx / fpx;
    }
    r0
}

/// Eigenvectors (as columns) and the two non-zero eigenvalues of a symmetric
/// rank-2 matrix, larger magnitude first. The third column spans the kernel.
fn singular_eigen(x: &Matrix3<f64>) -> (Matrix3<f64>, (f64, f64)) {
    let (m11, m12, m13) = (x[(0, 0)], x[(0, 1)], x[(0, 2)]);
    let (m22, m23, m33) = (x[(1, 1)], x[(1, 2)], x[(2, 2)]);

    let v3 = Vector3::new(m12 * m23 - m13 * m22, m13 * m12 - m23 * m11, m22 * m11 - m12 * m12).normalize();

    let b = -m11 - m22 - m33;
    let c = -m12 * m12 - m13 * m13 - m23 * m23 + m11 * (m22 + m33) + m22 * m33;
    let (mut e1, mut e2) = quadratic_roots(b, c).unwrap_or((0.5 * -b, 0.5 * -b));
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }

    let mx0011 = -m11 * m22;
    let prec0 = m12 * m23 - m13 * m22;
    let prec1 = m12 * m13 - m11 * m23;
    let vec_for = |e: f64| {
        let tmp = 1.0 / (e * (m11 + m22) + mx0011 - e * e + m12 * m12);
        let a1 = -(e * m13 + prec0) * tmp;
        let a2 = -(e * m23 + prec1) * tmp;
        let rn = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vector3::new(a1 * rn, a2 * rn, rn)
    };
    let v1 = vec_for(e1);
    let v2 = vec_for(e2);
    (Matrix3::from_columns(&[v1, v2, v3]), (e1, e2))
}

/// A few Gauss-Newton steps on the three law-of-cosines residuals.
fn refine_depths(lambda: Vector3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vector3<f64> {
    let residual = |l: &Vector3<f64>| {
        Vector3::new(
            l.x * l.x + l.y * l.y + b12 * l.x * l.y - a12,
            l.x * l.x + l.z * l.z + b13 * l.x * l.z - a13,
            l.y * l.y + l.z * l.z + b23 * l.y * l.z - a23,
        )
    };
    let mut l = lambda;
    let mut r = residual(&l);
    for _ in 0..5 {
        if r.abs().sum() < 1e-13 {
            break;
        }
        let j = Matrix3::new(
            2.0 * l.x + b12 * l.y,
            2.0 * l.y + b12 * l.x,
            0.0,
            2.0 * l.x + b13 * l.z,
            0.0,
            2.0 * l.z + b13 * l.x,
            0.0,
            2.0 * l.y + b23 * l.z,
            2.0 * l.z + b23 * l.y,
        );
        let Some(inv) = j.try_inverse() else { break };
        let next = l - inv * r;
        let rn = residual(&next);
        if rn.abs().sum() > r.abs().sum() {
            break;
        }
        l = next;
        r = rn;
    }
    l
}
