//! Replays the checked-in fuzz corpus through every parser entry point.

use std::fs;
use std::path::{Path, PathBuf};

use wayfinder_cli::args::parse_rates;
use wayfinder_core::descriptor_io::{decode_blob, DescriptorManifest};
use wayfinder_core::evaluation::{order_probability, ErrorTable};
use wayfinder_core::geometry::FloorTransform;
use wayfinder_core::map::{parse_map_json, parse_survey_json};
use wayfinder_service::payload::{decode_query, encode_query, QueryPayload};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> Option<&str> {
    std::str::from_utf8(bytes).ok()
}

#[test]
fn descriptor_manifest_seeds() {
    let mut accepted = 0;
    for (_, data) in seeds("descriptor_manifest") {
        let Some(t) = text(&data) else { continue };
        if let Ok(m) = DescriptorManifest::parse(t) {
            accepted += 1;
            let _ = m.expected_blob_len();
            assert_eq!(DescriptorManifest::parse(&m.to_json()).unwrap(), m);
        }
    }
    assert!(accepted >= 1);
}

#[test]
fn descriptor_blob_seeds() {
    let mut decoded = 0;
    for (p, data) in seeds("descriptor_blob") {
        let split = data.iter().position(|&b| b == 0).unwrap();
        let Some(t) = text(&data[..split]) else { continue };
        let Ok(manifest) = DescriptorManifest::parse(t) else { continue };
        match decode_blob(&manifest, &data[split + 1..]) {
            Ok(records) => {
                decoded += 1;
                assert_eq!(records.len(), manifest.images.len(), "{}", p.display());
            }
            Err(e) => assert!(!p.ends_with("valid.bin"), "{e}"),
        }
    }
    assert_eq!(decoded, 1);
}

#[test]
fn map_json_seeds() {
    for (p, data) in seeds("map_json") {
        let Some(t) = text(&data) else { continue };
        let r = parse_map_json(t, Path::new("map.json"));
        assert_eq!(r.is_ok(), p.ends_with("valid.json"), "{}", p.display());
    }
}

#[test]
fn survey_json_seeds() {
    for (p, data) in seeds("survey_json") {
        let Some(t) = text(&data) else { continue };
        match parse_survey_json(t, Path::new("survey.json")) {
            Ok(s) => {
                let _ = s.map_landmarks(&FloorTransform::identity());
                let _ = s.assemble(Vec::new(), 18);
            }
            Err(e) => assert!(!p.ends_with("valid.json"), "{e}"),
        }
    }
}

#[test]
fn query_payload_seeds() {
    for (p, data) in seeds("query_payload") {
        let Ok(payload) = serde_json::from_slice::<QueryPayload>(&data) else { continue };
        let r = decode_query(&payload, 4, 2);
        let ok = p.ends_with("valid.json") || p.ends_with("no_locals.json");
        assert_eq!(r.is_ok(), ok, "{}: {r:?}", p.display());
        if let Ok(q) = r {
            assert_eq!(decode_query(&encode_query(&q), 4, 2).unwrap(), q);
        }
    }
}

#[test]
fn error_table_seeds() {
    for (p, data) in seeds("error_table_csv") {
        let Some(t) = text(&data) else { continue };
        let Ok(table) = ErrorTable::parse_csv(t) else {
            let name = p.file_name().unwrap().to_str().unwrap();
            assert!(["ragged.csv", "negative.csv"].contains(&name), "{name}");
            continue;
        };
        if let Ok(o) = order_probability(&table) {
            assert!((0.0..=1.0).contains(&o.p));
        }
        assert_eq!(ErrorTable::parse_csv(&table.to_csv()).unwrap(), table);
    }
}

#[test]
fn rate_list_seeds() {
    for (_, data) in seeds("rate_list") {
        let Some(t) = text(&data) else { continue };
        if let Ok(r) = parse_rates(t) {
            assert!(r[0] >= 1);
            assert!(r.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
