//! Descriptor file format.
//!
//! A UTF-8 JSON manifest lists one record per image
//! (`image_id`, `global_descriptor_offset`, `keypoint_count`) and names a
//! binary blob of little-endian `f32`. The blob holds every global descriptor
//! first, then the keypoints of each image in manifest order. A keypoint is
//! `u, v`, `local_dim` descriptor components and a landmark id stored as a
//! little-endian `i32` (`-1` for unlinked).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{DescriptorError, GlobalDescriptor, LocalFeature};

pub const MANIFEST_FORMAT: &str = "wayfinder-descriptors";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Dimension(#[from] DescriptorError),
    #[error("unsupported descriptor format version {0}")]
    VersionUnsupported(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn format(offset: usize, message: impl Into<String>) -> Self {
        IngestError::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Converts a serde_json line/column into a byte offset into `text`.
pub(crate) fn json_error_offset(text: &str, err: &serde_json::Error) -> usize {
    let line = err.line();
    if line == 0 {
        return 0;
    }
    let start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (start + err.column().saturating_sub(1)).min(text.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: u32,
    pub global_descriptor_offset: u64,
    pub keypoint_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorManifest {
    pub format: String,
    pub version: u32,
    pub global_dim: usize,
    pub local_dim: usize,
    /// Blob path, relative to the manifest.
    pub blob: String,
    pub images: Vec<ManifestRecord>,
}

impl DescriptorManifest {
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let manifest: DescriptorManifest = serde_json::from_str(text)
            .map_err(|e| IngestError::format(json_error_offset(text, &e), e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(IngestError::format(0, format!("unknown format tag {:?}", manifest.format)));
        }
        if manifest.version != MANIFEST_VERSION {
            return Err(IngestError::VersionUnsupported(manifest.version));
        }
        if manifest.global_dim == 0 {
            return Err(IngestError::format(0, "global_dim must be positive"));
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn global_bytes(&self) -> usize {
        self.global_dim * 4
    }

    fn keypoint_bytes(&self) -> usize {
        (3 + self.local_dim) * 4
    }

    /// Exact blob length implied by the manifest, or `None` on overflow.
    pub fn expected_blob_len(&self) -> Option<usize> {
        let globals = self.images.len().checked_mul(self.global_bytes())?;
        self.images.iter().try_fold(globals, |acc, r| {
            (r.keypoint_count as usize)
                .checked_mul(self.keypoint_bytes())
                .and_then(|b| acc.checked_add(b))
        })
    }
}

/// Descriptors of one image as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub image_id: u32,
    pub global: GlobalDescriptor,
    pub locals: Vec<LocalFeature>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn word(&mut self) -> Result<[u8; 4], IngestError> {
        let end = self.pos + 4;
        let w = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| IngestError::format(self.pos, "unexpected end of blob"))?;
        self.pos = end;
        Ok([w[0], w[1], w[2], w[3]])
    }

    fn f32(&mut self) -> Result<f32, IngestError> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.word()?);
        if !v.is_finite() {
            return Err(IngestError::format(at, "non-finite value"));
        }
        Ok(v)
    }

    fn i32(&mut self) -> Result<i32, IngestError> {
        Ok(i32::from_le_bytes(self.word()?))
    }
}

/// Decodes a blob against its manifest.
pub fn decode_blob(manifest: &DescriptorManifest, blob: &[u8]) -> Result<Vec<DescriptorRecord>, IngestError> {
    let expected = manifest
        .expected_blob_len()
        .ok_or_else(|| IngestError::format(0, "manifest sizes overflow"))?;
    if blob.len() != expected {
        return Err(IngestError::format(
            blob.len().min(expected),
            format!("blob is {} bytes, manifest implies {expected}", blob.len()),
        ));
    }
    let globals_end = manifest.images.len() * manifest.global_bytes();
    let mut keypoints = Reader {
        bytes: blob,
        pos: globals_end,
    };
    let mut out = Vec::with_capacity(manifest.images.len());
    for rec in &manifest.images {
        let off = usize::try_from(rec.global_descriptor_offset)
            .map_err(|_| IngestError::format(0, "global offset overflows"))?;
        if off % 4 != 0 || off.checked_add(manifest.global_bytes()).is_none_or(|e| e > globals_end) {
            return Err(IngestError::format(
                off.min(blob.len()),
                format!("image {}: global offset {off} outside the global section", rec.image_id),
            ));
        }
        let mut g = Reader { bytes: blob, pos: off };
        let global = (0..manifest.global_dim)
            .map(|_| g.f32())
            .collect::<Result<Vec<_>, _>>()?;

        let mut locals = Vec::with_capacity(rec.keypoint_count as usize);
        for _ in 0..rec.keypoint_count {
            let at = keypoints.pos;
            let u = keypoints.f32()?;
            let v = keypoints.f32()?;
            if u < 0.0 || v < 0.0 {
                return Err(IngestError::format(at, "negative keypoint coordinate"));
            }
            let descriptor = (0..manifest.local_dim)
                .map(|_| keypoints.f32())
                .collect::<Result<Vec<_>, _>>()?;
            let lid_at = keypoints.pos;
            let landmark_id = match keypoints.i32()? {
                -1 => None,
                id if id >= 0 => Some(id as u32),
                id => return Err(IngestError::format(lid_at, format!("invalid landmark id {id}"))),
            };
            locals.push(LocalFeature {
                keypoint: [u, v],
                descriptor,
                landmark_id,
            });
        }
        out.push(DescriptorRecord {
            image_id: rec.image_id,
            global: GlobalDescriptor(global),
            locals,
        });
    }
    Ok(out)
}

/// Encodes records into a manifest and blob. Every record must share the
/// given dimensions.
pub fn encode(
    records: &[DescriptorRecord],
    global_dim: usize,
    local_dim: usize,
    blob_name: &str,
) -> Result<(DescriptorManifest, Vec<u8>), DescriptorError> {
    let mut images = Vec::with_capacity(records.len());
    let mut globals = Vec::with_capacity(records.len() * global_dim * 4);
    let mut kps = Vec::new();
    for r in records {
        if r.global.dim() != global_dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: global_dim,
                got: r.global.dim(),
            });
        }
        images.push(ManifestRecord {
            image_id: r.image_id,
            global_descriptor_offset: globals.len() as u64,
            keypoint_count: r.locals.len() as u32,
        });
        for v in r.global.as_slice() {
            globals.extend_from_slice(&v.to_le_bytes());
        }
        for f in &r.locals {
            if f.descriptor.len() != local_dim {
                return Err(DescriptorError::DimensionMismatch {
                    expected: local_dim,
                    got: f.descriptor.len(),
                });
            }
            kps.extend_from_slice(&f.keypoint[0].to_le_bytes());
            kps.extend_from_slice(&f.keypoint[1].to_le_bytes());
            for v in &f.descriptor {
                kps.extend_from_slice(&v.to_le_bytes());
            }
            let lid = f.landmark_id.map_or(-1i32, |id| id as i32);
            kps.extend_from_slice(&lid.to_le_bytes());
        }
    }
    globals.extend_from_slice(&kps);
    let manifest = DescriptorManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        global_dim,
        local_dim,
        blob: blob_name.to_string(),
        images,
    };
    Ok((manifest, globals))
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`; returns the manifest path.
pub fn write_descriptor_files(
    dir: &Path,
    stem: &str,
    records: &[DescriptorRecord],
    global_dim: usize,
    local_dim: usize,
) -> Result<PathBuf, IngestError> {
    let blob_name = format!("{stem}.bin");
    let (manifest, blob) = encode(records, global_dim, local_dim, &blob_name)?;
    let manifest_path = dir.join(format!("{stem}.json"));
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, blob).map_err(|e| IngestError::io(&blob_path, e))?;
    fs::write(&manifest_path, manifest.to_json()).map_err(|e| IngestError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Loads a manifest and its blob from disk.
pub fn ingest_descriptor_files(manifest_path: &Path) -> Result<(DescriptorManifest, Vec<DescriptorRecord>), IngestError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| IngestError::io(manifest_path, e))?;
    let manifest = DescriptorManifest::parse(&text)?;
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| IngestError::io(&blob_path, e))?;
    let records = decode_blob(&manifest, &blob)?;
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: u32, gdim: usize, ldim: usize, nkp: usize) -> DescriptorRecord {
        DescriptorRecord {
            image_id: id,
            global: GlobalDescriptor((0..gdim).map(|k| (k as f32 + id as f32) * 0.25).collect()),
            locals: (0..nkp)
                .map(|i| LocalFeature {
                    keypoint: [i as f32 + 0.5, 2.0 * i as f32],
                    descriptor: (0..ldim).map(|k| (k * i) as f32 * 0.01).collect(),
                    landmark_id: if i % 3 == 0 { None } else { Some(i as u32 * 10) },
                })
                .collect(),
        }
    }

    #[test]
    fn roundtrip_in_memory() {
        let recs = vec![record(4, 16, 8, 3), record(9, 16, 8, 0), record(11, 16, 8, 5)];
        let (manifest, blob) = encode(&recs, 16, 8, "d.bin").unwrap();
        let parsed = DescriptorManifest::parse(&manifest.to_json()).unwrap();
        assert_eq!(parsed, manifest);
        assert_eq!(decode_blob(&parsed, &blob).unwrap(), recs);
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let recs = vec![record(0, 16, 8, 3)];
        let (manifest, blob) = encode(&recs, 16, 8, "d.bin").unwrap();
        let err = decode_blob(&manifest, &blob[..blob.len() - 3]).unwrap_err();
        assert!(matches!(err, IngestError::Format { .. }), "{err}");
    }

    #[test]
    fn bad_landmark_id_reports_offset() {
        let recs = vec![record(0, 4, 2, 1)];
        let (manifest, mut blob) = encode(&recs, 4, 2, "d.bin").unwrap();
        let n = blob.len();
        blob[n - 4..].copy_from_slice(&(-7i32).to_le_bytes());
        match decode_blob(&manifest, &blob) {
            Err(IngestError::Format { offset, .. }) => assert_eq!(offset, n - 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_errors() {
        assert!(matches!(DescriptorManifest::parse("{\"format\":"), Err(IngestError::Format { .. })));
        let mut m = encode(&[], 4, 2, "x.bin").unwrap().0;
        m.version = 7;
        assert!(matches!(
            DescriptorManifest::parse(&m.to_json()),
            Err(IngestError::VersionUnsupported(7))
        ));
        let text = "{\n  \"format\": 3\n}";
        match DescriptorManifest::parse(text) {
            Err(IngestError::Format { offset, .. }) => assert!(offset > 0 && offset <= text.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_image_fixture_with_full_size_globals() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record(0, 32768, 256, 4), record(1, 32768, 256, 2)];
        let path = write_descriptor_files(dir.path(), "fixture", &recs, 32768, 256).unwrap();
        let (manifest, loaded) = ingest_descriptor_files(&path).unwrap();
        assert_eq!(manifest.images.len(), 2);
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].global.dim(), 32768);
        assert_eq!(loaded, recs);
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200), n in 0u32..4) {
            let manifest = DescriptorManifest {
                format: MANIFEST_FORMAT.into(),
                version: 1,
                global_dim: 3,
                local_dim: 2,
                blob: "b".into(),
                images: (0..n).map(|i| ManifestRecord { image_id: i, global_descriptor_offset: (i * 12) as u64, keypoint_count: i }).collect(),
            };
            let _ = decode_blob(&manifest, &bytes);
        }
    }
}
