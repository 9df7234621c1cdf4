//! Map directories: `map.json` plus `descriptors.json` / `descriptors.bin`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Boundary, Destination, Landmark, MapError, MapHeader, ReferenceImage, TopometricMap};
use crate::descriptor_io::{self, json_error_offset, DescriptorRecord, IngestError};

pub const MAP_FORMAT: &str = "wayfinder-map";
pub const MAP_FORMAT_VERSION: u32 = 1;
const MAP_FILE: &str = "map.json";
const DESCRIPTOR_STEM: &str = "descriptors";

#[derive(Debug, Error)]
pub enum MapFormatError {
    #[error("format error in {path} at byte {offset}: {message}")]
    Format { path: PathBuf, offset: usize, message: String },
    #[error("unsupported map format version {0}")]
    VersionUnsupported(u32),
    #[error(transparent)]
    Descriptors(#[from] IngestError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MapFormatError + '_ {
    move |source| MapFormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    format: String,
    format_version: u32,
    map_version: u64,
    #[serde(flatten)]
    header: MapHeader,
    descriptors: String,
    images: Vec<ReferenceImage>,
    landmarks: Vec<Landmark>,
    boundaries: Vec<Boundary>,
    next_boundary_id: u32,
    destinations: Vec<Destination>,
}

/// Writes `map` into `dir`, creating it if needed.
pub fn save_map(map: &TopometricMap, dir: &Path) -> Result<(), MapFormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let records: Vec<DescriptorRecord> = map
        .images
        .iter()
        .map(|img| DescriptorRecord {
            image_id: img.id,
            global: img.global.clone(),
            locals: img.locals.clone(),
        })
        .collect();
    let manifest = descriptor_io::write_descriptor_files(
        dir,
        DESCRIPTOR_STEM,
        &records,
        map.header.global_dim,
        map.header.local_dim,
    )?;
    let file = MapFile {
        format: MAP_FORMAT.to_string(),
        format_version: MAP_FORMAT_VERSION,
        map_version: map.version,
        header: map.header.clone(),
        descriptors: manifest
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("descriptors.json")
            .to_string(),
        images: map.images.iter().map(|i| (**i).clone()).map(strip).collect(),
        landmarks: map.landmarks.to_vec(),
        boundaries: map.boundaries.clone(),
        next_boundary_id: map.next_boundary_id,
        destinations: map.destinations.clone(),
    };
    let path = dir.join(MAP_FILE);
    let text = serde_json::to_string_pretty(&file).expect("map serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

fn strip(mut img: ReferenceImage) -> ReferenceImage {
    img.global = Default::default();
    img.locals = Vec::new();
    img
}

/// Parses and validates `map.json` text without touching descriptors.
pub fn parse_map_json(text: &str, path: &Path) -> Result<(u64, MapHeader, MapFileBody), MapFormatError> {
    #[derive(Deserialize)]
    struct Probe {
        format: String,
        format_version: u32,
    }
    let fmt = |err: serde_json::Error| MapFormatError::Format {
        path: path.to_path_buf(),
        offset: json_error_offset(text, &err),
        message: err.to_string(),
    };
    let probe: Probe = serde_json::from_str(text).map_err(fmt)?;
    if probe.format != MAP_FORMAT {
        return Err(MapFormatError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("expected format {MAP_FORMAT:?}, found {:?}", probe.format),
        });
    }
    if probe.format_version != MAP_FORMAT_VERSION {
        return Err(MapFormatError::VersionUnsupported(probe.format_version));
    }
    let file: MapFile = serde_json::from_str(text).map_err(fmt)?;
    Ok((
        file.map_version,
        file.header,
        MapFileBody {
            descriptors: file.descriptors,
            images: file.images,
            landmarks: file.landmarks,
            boundaries: file.boundaries,
            next_boundary_id: file.next_boundary_id,
            destinations: file.destinations,
        },
    ))
}

/// Map contents other than the header, as read from `map.json`.
pub struct MapFileBody {
    descriptors: String,
    images: Vec<ReferenceImage>,
    landmarks: Vec<Landmark>,
    boundaries: Vec<Boundary>,
    next_boundary_id: u32,
    destinations: Vec<Destination>,
}

/// Reads a map directory written by [`save_map`].
pub fn load_map(dir: &Path) -> Result<TopometricMap, MapFormatError> {
    let path = dir.join(MAP_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let (version, header, body) = parse_map_json(&text, &path)?;
    let manifest_path = dir.join(&body.descriptors);
    let (manifest, records) = descriptor_io::ingest_descriptor_files(&manifest_path)?;
    if manifest.global_dim != header.global_dim || manifest.local_dim != header.local_dim {
        return Err(MapFormatError::Format {
            path: manifest_path,
            offset: 0,
            message: "descriptor dimensions disagree with map.json".into(),
        });
    }
    let mut by_id: HashMap<u32, DescriptorRecord> = records.into_iter().map(|r| (r.image_id, r)).collect();
    let mut images = Vec::with_capacity(body.images.len());
    for mut img in body.images {
        let Some(rec) = by_id.remove(&img.id) else {
            return Err(MapFormatError::Format {
                path: manifest_path,
                offset: 0,
                message: format!("no descriptors for image {}", img.id),
            });
        };
        img.global = rec.global;
        img.locals = rec.locals;
        images.push(img);
    }
    let mut map = TopometricMap::new(header, images, body.landmarks)?;
    map.version = version;
    map.boundaries = body.boundaries;
    map.next_boundary_id = body.next_boundary_id;
    map.destinations = body.destinations;
    map.check_integrity()?;
    Ok(map)
}
