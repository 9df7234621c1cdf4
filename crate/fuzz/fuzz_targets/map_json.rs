#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use wayfinder_core::map::parse_map_json;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_map_json(text, Path::new("map.json"));
    }
});
