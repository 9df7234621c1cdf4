//! Global and local image descriptors and the local-feature matcher.
//!
//! Neural extraction happens elsewhere; this module only stores descriptor
//! vectors and compares them. Storage is `f32`, distances are accumulated in
//! `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default global descriptor length.
pub const DEFAULT_GLOBAL_DIM: usize = 32768;
/// Default local descriptor length.
pub const DEFAULT_LOCAL_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite descriptor component at index {0}")]
    NonFinite(usize),
}

/// Whole-image descriptor used for retrieval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalDescriptor(pub Vec<f32>);

impl GlobalDescriptor {
    pub fn new(values: Vec<f32>) -> Result<Self, DescriptorError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Euclidean distance between two global descriptors.
pub fn descriptor_distance(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64, DescriptorError> {
    if a.dim() != b.dim() {
        return Err(DescriptorError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(squared_distance(&a.0, &b.0).sqrt())
}

/// Squared Euclidean distance.
///
/// Thirty-two `f32` lanes accumulate blocks of 256 elements; after each block
/// every lane is added to its own `f64` lane, and the `f64` lanes are summed
/// once at the end. The summation order is fixed, so the AVX2 path and the
/// portable path return identical bits. Relative error stays below 1e-6.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { squared_distance_avx2(a, b) };
    }
    distance_kernel(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn squared_distance_avx2(a: &[f32], b: &[f32]) -> f64 {
    distance_kernel(a, b)
}

const LANES: usize = 32;
const BLOCK: usize = 256;

#[inline(always)]
fn block_lanes(a: &[f32], b: &[f32], wide: &mut [f64; LANES]) {
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let x: &[f32; LANES] = x.try_into().unwrap();
        let y: &[f32; LANES] = y.try_into().unwrap();
        for l in 0..LANES {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = x - y;
        acc[l] += d * d;
    }
    for l in 0..LANES {
        wide[l] += acc[l] as f64;
    }
}

#[inline(always)]
fn distance_kernel(a: &[f32], b: &[f32]) -> f64 {
    let mut wide = [0.0f64; LANES];
    for (ba, bb) in a.chunks(BLOCK).zip(b.chunks(BLOCK)) {
        block_lanes(ba, bb, &mut wide);
    }
    wide.iter().sum()
}

/// Squared distances from `q` to two rows at once, bit-identical to two
/// [`squared_distance`] calls. Sharing the query loads keeps the scan close
/// to memory bandwidth.
#[inline]
pub fn squared_distance_pair(q: &[f32], a: &[f32], b: &[f32]) -> (f64, f64) {
    debug_assert!(q.len() == a.len() && q.len() == b.len());
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { pair_avx2(q, a, b) };
    }
    pair_kernel(q, a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn pair_avx2(q: &[f32], a: &[f32], b: &[f32]) -> (f64, f64) {
    pair_kernel(q, a, b)
}

#[inline(always)]
fn pair_kernel(q: &[f32], a: &[f32], b: &[f32]) -> (f64, f64) {
    let mut wa = [0.0f64; LANES];
    let mut wb = [0.0f64; LANES];
    for ((bq, ba), bb) in q.chunks(BLOCK).zip(a.chunks(BLOCK)).zip(b.chunks(BLOCK)) {
        if bq.len() < BLOCK {
            block_lanes(bq, ba, &mut wa);
            block_lanes(bq, bb, &mut wb);
            continue;
        }
        let mut acc_a = [0.0f32; LANES];
        let mut acc_b = [0.0f32; LANES];
        for ((x, y), z) in bq.chunks_exact(LANES).zip(ba.chunks_exact(LANES)).zip(bb.chunks_exact(LANES)) {
            let x: &[f32; LANES] = x.try_into().unwrap();
            let y: &[f32; LANES] = y.try_into().unwrap();
            let z: &[f32; LANES] = z.try_into().unwrap();
            for l in 0..LANES {
                let d = x[l] - y[l];
                acc_a[l] += d * d;
                let e = x[l] - z[l];
                acc_b[l] += e * e;
            }
        }
        for l in 0..LANES {
            wa[l] += acc_a[l] as f64;
            wb[l] += acc_b[l] as f64;
        }
    }
    (wa.iter().sum(), wb.iter().sum())
}

/// Row-major store of equal-length descriptors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorMatrix {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    /// Wraps a flat buffer; its length must be a multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self, DescriptorError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(DescriptorError::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), DescriptorError> {
        if row.len() != self.dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// New matrix holding the selected rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut out = Self::with_capacity(self.dim, rows.len());
        for &r in rows {
            out.data.extend_from_slice(self.row(r));
        }
        out
    }
}

/// A keypoint with its local descriptor and optional sparse-map landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFeature {
    /// Image pixel coordinate `(u, v)`.
    pub keypoint: [f32; 2],
    pub descriptor: Vec<f32>,
    pub landmark_id: Option<u32>,
}

/// One-to-one pairs of `(query index, reference index)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
}

impl MatchSet {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn swapped(&self) -> MatchSet {
        let mut pairs: Vec<_> = self.pairs.iter().map(|&(q, r)| (r, q)).collect();
        pairs.sort_unstable();
        MatchSet { pairs }
    }
}

/// Produces local-feature correspondences between two images.
pub trait FeatureMatcher: Send + Sync {
    fn match_features(
        &self,
        query: &[LocalFeature],
        reference: &[LocalFeature],
    ) -> Result<MatchSet, DescriptorError>;
}

/// Mutual nearest neighbours that also pass a Lowe ratio test in both
/// directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutualNearestNeighbor {
    pub ratio: f32,
}

impl Default for MutualNearestNeighbor {
    fn default() -> Self {
        Self { ratio: 0.8 }
    }
}

#[derive(Clone, Copy)]
struct Nearest {
    index: usize,
    best: f32,
    second: f32,
}

impl MutualNearestNeighbor {
    /// Squared-distance table, row per query feature.
    fn distance_table(query: &[LocalFeature], reference: &[LocalFeature]) -> Vec<f32> {
        let norms = |fs: &[LocalFeature]| -> Vec<f32> {
            fs.iter()
                .map(|f| f.descriptor.iter().map(|v| v * v).sum())
                .collect()
        };
        let qn = norms(query);
        let rn = norms(reference);
        let mut table = vec![0.0f32; query.len() * reference.len()];
        for (i, q) in query.iter().enumerate() {
            let row = &mut table[i * reference.len()..(i + 1) * reference.len()];
            for (j, r) in reference.iter().enumerate() {
                let dot: f32 = q.descriptor.iter().zip(&r.descriptor).map(|(a, b)| a * b).sum();
                row[j] = (qn[i] + rn[j] - 2.0 * dot).max(0.0);
            }
        }
        table
    }

    fn nearest(values: impl Iterator<Item = f32>) -> Option<Nearest> {
        let mut out: Option<Nearest> = None;
        for (index, d) in values.enumerate() {
            match &mut out {
                None => {
                    out = Some(Nearest {
                        index,
                        best: d,
                        second: f32::INFINITY,
                    })
                }
                Some(n) => {
                    if d < n.best {
                        n.second = n.best;
                        n.best = d;
                        n.index = index;
                    } else if d < n.second {
                        n.second = d;
                    }
                }
            }
        }
        out
    }

    fn passes(&self, n: &Nearest) -> bool {
        // squared distances, so the ratio is squared too
        n.best < self.ratio * self.ratio * n.second
    }
}

impl FeatureMatcher for MutualNearestNeighbor {
    fn match_features(
        &self,
        query: &[LocalFeature],
        reference: &[LocalFeature],
    ) -> Result<MatchSet, DescriptorError> {
        let dim = query
            .first()
            .or(reference.first())
            .map(|f| f.descriptor.len())
            .unwrap_or(0);
        for f in query.iter().chain(reference) {
            if f.descriptor.len() != dim {
                return Err(DescriptorError::DimensionMismatch {
                    expected: dim,
                    got: f.descriptor.len(),
                });
            }
        }
        if query.is_empty() || reference.is_empty() {
            return Ok(MatchSet::default());
        }
        let table = Self::distance_table(query, reference);
        let nr = reference.len();
        let forward: Vec<Nearest> = (0..query.len())
            .map(|i| Self::nearest(table[i * nr..(i + 1) * nr].iter().copied()).unwrap())
            .collect();
        let backward: Vec<Nearest> = (0..nr)
            .map(|j| Self::nearest((0..query.len()).map(|i| table[i * nr + j])).unwrap())
            .collect();

        let pairs = forward
            .iter()
            .enumerate()
            .filter(|(i, f)| {
                let b = &backward[f.index];
                b.index == *i && self.passes(f) && self.passes(b)
            })
            .map(|(i, f)| (i, f.index))
            .collect();
        Ok(MatchSet { pairs })
    }
}
