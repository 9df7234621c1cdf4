#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use wayfinder_core::geometry::FloorTransform;
use wayfinder_core::map::parse_survey_json;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = parse_survey_json(text, Path::new("survey.json")) {
            let _ = s.map_landmarks(&FloorTransform::identity());
            let _ = s.assemble(Vec::new(), 18);
        }
    }
});
