//! Coordinate frames shared by every other module.
//!
//! Two frames matter: the reconstruction frame of the sparse map (`MapPoint3`,
//! y axis perpendicular to the ground) and the floor-plan frame
//! (`FloorPoint`, pixels). A `FloorTransform` takes the first to the second
//! after dropping the vertical axis.
//!
//! Directions are degrees counter-clockwise from the floor-plan +x axis,
//! measured with `atan2(dy, dx)` in floor-plan pixel coordinates, and always
//! normalized to `[0, 360)`.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition number of `X Xᵀ` above which a correspondence set is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate correspondence configuration (condition number {0:e})")]
    DegenerateConfiguration(f64),
    #[error("slicing requires m * theta = 360, got {m} * {theta}")]
    InvalidSlicing { m: usize, theta: f64 },
    #[error("field of view must lie in (0, 180) degrees, got {0}")]
    InvalidFov(f64),
    #[error("non-finite coordinate")]
    NonFinite,
}

/// A point on the floor plan, in floor-plan pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FloorPoint {
    pub x: f64,
    pub y: f64,
}

impl FloorPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &FloorPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Bearing from `self` towards `other`.
    pub fn bearing_to(&self, other: &FloorPoint) -> Direction {
        Direction::from_radians((other.y - self.y).atan2(other.x - self.x))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A point in the sparse-map reconstruction frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MapPoint3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MapPoint3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Heading in degrees, normalized to `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct Direction(f64);

impl Direction {
    pub fn new(degrees: f64) -> Self {
        let mut d = degrees.rem_euclid(360.0);
        // rem_euclid can round up to exactly 360 for tiny negative inputs
        if d >= 360.0 {
            d = 0.0;
        }
        Self(d)
    }

    pub fn from_radians(radians: f64) -> Self {
        Self::new(radians.to_degrees())
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    /// Signed turn from `self` to `target`, in `(-180, 180]`.
    pub fn turn_to(self, target: Direction) -> f64 {
        signed_angle(target.0 - self.0)
    }

    /// Unsigned circular difference in `[0, 180]`.
    pub fn circular_difference(self, other: Direction) -> f64 {
        let d = (self.0 - other.0).abs();
        d.min(360.0 - d)
    }
}

impl From<f64> for Direction {
    fn from(value: f64) -> Self {
        Direction::new(value)
    }
}

impl From<Direction> for f64 {
    fn from(value: Direction) -> Self {
        value.0
    }
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn signed_angle(degrees: f64) -> f64 {
    let d = degrees.rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Affine map from the reconstruction frame to the floor plan.
///
/// Applied to the column `(x, 1, z)`: the vertical coordinate is replaced by 1
/// so the middle column acts as the translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 2]", into = "[[f64; 3]; 2]")]
pub struct FloorTransform {
    matrix: Matrix2x3<f64>,
}

impl FloorTransform {
    pub fn from_rows(rows: [[f64; 3]; 2]) -> Self {
        Self {
            matrix: Matrix2x3::new(
                rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2],
            ),
        }
    }

    /// Maps `x -> x`, `z -> y` with no offset.
    pub fn identity() -> Self {
        Self::from_rows([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn rows(&self) -> [[f64; 3]; 2] {
        let m = &self.matrix;
        [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]]]
    }

    pub fn matrix(&self) -> &Matrix2x3<f64> {
        &self.matrix
    }

    pub fn apply(&self, p: &MapPoint3) -> FloorPoint {
        let v = self.matrix * Vector3::new(p.x, 1.0, p.z);
        FloorPoint::new(v.x, v.y)
    }

    /// Maps a horizontal direction vector `(dx, dz)` of the reconstruction
    /// frame onto the floor plan (translation ignored).
    pub fn apply_vector(&self, dx: f64, dz: f64) -> Vector2<f64> {
        let m = &self.matrix;
        Vector2::new(m[(0, 0)] * dx + m[(0, 2)] * dz, m[(1, 0)] * dx + m[(1, 2)] * dz)
    }

    /// Floor-plan heading of a horizontal reconstruction-frame vector.
    pub fn heading_of(&self, dx: f64, dz: f64) -> Direction {
        let v = self.apply_vector(dx, dz);
        Direction::from_radians(v.y.atan2(v.x))
    }
}

impl From<[[f64; 3]; 2]> for FloorTransform {
    fn from(rows: [[f64; 3]; 2]) -> Self {
        Self::from_rows(rows)
    }
}

impl From<FloorTransform> for [[f64; 3]; 2] {
    fn from(t: FloorTransform) -> Self {
        t.rows()
    }
}

/// Output of [`estimate_floor_transform`]: the transform plus the per-point
/// residuals shown to the map maker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub transform: FloorTransform,
    /// Euclidean residual of each correspondence, floor-plan pixels.
    pub residuals: Vec<f64>,
    pub rms: f64,
}

/// Least-squares fit `T = x Xᵀ (X Xᵀ)⁻¹` over `h >= 3` correspondences with
/// every `yᵢ` set to 1.
pub fn estimate_floor_transform(
    correspondences: &[(MapPoint3, FloorPoint)],
) -> Result<Alignment, GeometryError> {
    let h = correspondences.len();
    if h < 3 {
        return Err(GeometryError::TooFewPoints(h));
    }
    let mut xxt = Matrix3::<f64>::zeros();
    for (p, q) in correspondences {
        if !(p.x.is_finite() && p.z.is_finite() && q.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let col = Vector3::new(p.x, 1.0, p.z);
        xxt += col * col.transpose();
    }

    let cond = condition_number(&xxt);
    if !(cond <= MAX_CONDITION) {
        return Err(GeometryError::DegenerateConfiguration(cond));
    }
    // Same minimizer as x Xᵀ (X Xᵀ)⁻¹. Solved on centered coordinates so the
    // normal-equation condition number is not squared.
    let n = h as f64;
    let (mut mx, mut mz, mut mu, mut mv) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in correspondences {
        mx += p.x / n;
        mz += p.z / n;
        mu += q.x / n;
        mv += q.y / n;
    }
    let design = DMatrix::from_fn(h, 2, |r, c| {
        let p = &correspondences[r].0;
        [p.x - mx, p.z - mz][c]
    });
    let targets = DMatrix::from_fn(h, 2, |r, c| {
        let q = &correspondences[r].1;
        [q.x - mu, q.y - mv][c]
    });
    let svd = design.clone().svd(true, true);
    let mut solved = svd
        .solve(&targets, 0.0)
        .map_err(|_| GeometryError::DegenerateConfiguration(cond))?;
    // One step of iterative refinement on the residual.
    let correction = svd
        .solve(&(&targets - &design * &solved), 0.0)
        .map_err(|_| GeometryError::DegenerateConfiguration(cond))?;
    solved += correction;
    let (a, b) = (solved[(0, 0)], solved[(1, 0)]);
    let (c, d) = (solved[(0, 1)], solved[(1, 1)]);
    let transform = FloorTransform {
        matrix: Matrix2x3::new(a, mu - a * mx - b * mz, b, c, mv - c * mx - d * mz, d),
    };

    let residuals: Vec<f64> = correspondences
        .iter()
        .map(|(p, q)| transform.apply(p).distance(q))
        .collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / h as f64).sqrt();
    Ok(Alignment { transform, residuals, rms })
}

fn condition_number(sym: &Matrix3<f64>) -> f64 {
    let eig = sym.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Projects points through `transform`; an empty input yields an empty output.
pub fn project_points(transform: &FloorTransform, points: &[MapPoint3]) -> Vec<FloorPoint> {
    points.iter().map(|p| transform.apply(p)).collect()
}

/// Headings of the `m` slices cut from one panorama whose own heading is
/// `base`: `base + t * theta` for `t = 1..=m`.
pub fn slice_directions(
    base: Direction,
    m: usize,
    theta: f64,
) -> Result<Vec<Direction>, GeometryError> {
    if m == 0 || !theta.is_finite() || (m as f64 * theta - 360.0).abs() > 1e-9 {
        return Err(GeometryError::InvalidSlicing { m, theta });
    }
    Ok((1..=m)
        .map(|t| Direction::new(base.degrees() + t as f64 * theta))
        .collect())
}

/// Rectilinear (gnomonic) view cut out of an equirectangular panorama.
///
/// Pixel coordinates are continuous: `(0, 0)` is the top-left corner of the
/// output image and `(out_w / 2, out_h / 2)` its optical center. Panorama
/// longitude grows with the column index and equals `view_dir` at the center
/// column; latitude is positive above the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspectiveSlice {
    view_dir: Direction,
    focal: f64,
    out_w: f64,
    out_h: f64,
    in_w: f64,
    in_h: f64,
}

impl PerspectiveSlice {
    pub fn new(
        view_dir: Direction,
        fov_deg: f64,
        out_w: u32,
        out_h: u32,
        in_w: u32,
        in_h: u32,
    ) -> Result<Self, GeometryError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(GeometryError::InvalidFov(fov_deg));
        }
        let out_w = out_w as f64;
        Ok(Self {
            view_dir,
            focal: (out_w / 2.0) / (fov_deg.to_radians() / 2.0).tan(),
            out_w,
            out_h: out_h as f64,
            in_w: in_w as f64,
            in_h: in_h as f64,
        })
    }

    pub fn focal_length(&self) -> f64 {
        self.focal
    }

    pub fn vertical_fov(&self) -> f64 {
        2.0 * (self.out_h / 2.0 / self.focal).atan().to_degrees()
    }

    /// Longitude and latitude (degrees) of the ray through an output pixel.
    pub fn ray_angles(&self, u: f64, v: f64) -> (f64, f64) {
        let x = u - self.out_w / 2.0;
        let y = v - self.out_h / 2.0;
        let lon = self.view_dir.degrees() + x.atan2(self.focal).to_degrees();
        let lat = (-y).atan2(x.hypot(self.focal)).to_degrees();
        (lon.rem_euclid(360.0), lat)
    }

    /// Source panorama coordinate of an output pixel.
    pub fn source_coordinate(&self, u: f64, v: f64) -> (f64, f64) {
        let (lon, lat) = self.ray_angles(u, v);
        (self.in_w * lon / 360.0, self.in_h * (0.5 - lat / 180.0))
    }

    /// Inverse of [`source_coordinate`](Self::source_coordinate); `None` for
    /// panorama points behind the view.
    pub fn output_coordinate(&self, su: f64, sv: f64) -> Option<(f64, f64)> {
        let lon = 360.0 * su / self.in_w;
        let lat = (0.5 - sv / self.in_h) * 180.0;
        let dlon = signed_angle(lon - self.view_dir.degrees());
        if dlon.abs() >= 90.0 || lat.abs() >= 90.0 {
            return None;
        }
        let x = self.focal * dlon.to_radians().tan();
        let y = -lat.to_radians().tan() * x.hypot(self.focal);
        Some((x + self.out_w / 2.0, y + self.out_h / 2.0))
    }

    /// Source coordinates for every output pixel center, row-major.
    pub fn mapping(&self) -> Vec<(f64, f64)> {
        let w = self.out_w as usize;
        let h = self.out_h as usize;
        let mut out = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                out.push(self.source_coordinate(u as f64 + 0.5, v as f64 + 0.5));
            }
        }
        out
    }
}
