//! Survey files: frame poses and landmarks exported from a reconstruction,
//! paired with a descriptor manifest whose image ids follow
//! [`slice_image_id`](super::slice_image_id).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{slice_image_id, FrameObservation, Landmark, MapError, MapFormatError, SliceObservation};
use crate::descriptor_io::{json_error_offset, DescriptorRecord};
use crate::geometry::{Direction, FloorTransform, MapPoint3};

pub const SURVEY_FORMAT: &str = "wayfinder-survey";
pub const SURVEY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyPose {
    pub frame_id: u32,
    pub position: MapPoint3,
    /// Heading of the panorama's first column on the floor plan.
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyLandmark {
    pub id: u32,
    pub position: MapPoint3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyFile {
    pub format: String,
    pub version: u32,
    pub frames: Vec<SurveyPose>,
    pub landmarks: Vec<SurveyLandmark>,
}

impl SurveyFile {
    pub fn new(frames: Vec<SurveyPose>, landmarks: Vec<SurveyLandmark>) -> Self {
        Self {
            format: SURVEY_FORMAT.to_string(),
            version: SURVEY_FORMAT_VERSION,
            frames,
            landmarks,
        }
    }

    /// Landmarks projected with `transform`.
    pub fn map_landmarks(&self, transform: &FloorTransform) -> Vec<Landmark> {
        self.landmarks
            .iter()
            .map(|l| Landmark {
                id: l.id,
                position: l.position,
                floor_position: transform.apply(&l.position),
            })
            .collect()
    }

    /// Pairs every frame with the descriptors of its `m` slices.
    pub fn assemble(&self, records: Vec<DescriptorRecord>, m: usize) -> Result<Vec<FrameObservation>, MapError> {
        let mut by_id: HashMap<u32, DescriptorRecord> = records.into_iter().map(|r| (r.image_id, r)).collect();
        self.frames
            .iter()
            .map(|f| {
                let slices: Vec<SliceObservation> = (1..=m)
                    .filter_map(|t| by_id.remove(&slice_image_id(f.frame_id, m, t)))
                    .map(|r| SliceObservation {
                        global: r.global,
                        locals: r.locals,
                    })
                    .collect();
                if slices.len() != m {
                    return Err(MapError::SliceCount {
                        frame: f.frame_id,
                        expected: m,
                        got: slices.len(),
                    });
                }
                Ok(FrameObservation {
                    frame_id: f.frame_id,
                    position: f.position,
                    direction: f.direction,
                    slices,
                })
            })
            .collect()
    }
}

/// Parses survey JSON; `path` only labels errors.
pub fn parse_survey_json(text: &str, path: &Path) -> Result<SurveyFile, MapFormatError> {
    let survey: SurveyFile = serde_json::from_str(text).map_err(|e| MapFormatError::Format {
        path: path.to_path_buf(),
        offset: json_error_offset(text, &e),
        message: e.to_string(),
    })?;
    if survey.format != SURVEY_FORMAT {
        return Err(MapFormatError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("expected format {SURVEY_FORMAT:?}, found {:?}", survey.format),
        });
    }
    if survey.version != SURVEY_FORMAT_VERSION {
        return Err(MapFormatError::VersionUnsupported(survey.version));
    }
    let finite = |p: &MapPoint3| p.x.is_finite() && p.y.is_finite() && p.z.is_finite();
    if !survey.frames.iter().all(|f| finite(&f.position)) || !survey.landmarks.iter().all(|l| finite(&l.position)) {
        return Err(MapFormatError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "non-finite position".into(),
        });
    }
    Ok(survey)
}
