#![no_main]

//! Input is a manifest, a NUL byte, then the blob.

use libfuzzer_sys::fuzz_target;
use wayfinder_core::descriptor_io::{decode_blob, DescriptorManifest};

fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let Ok(text) = std::str::from_utf8(&data[..split]) else { return };
    let Ok(manifest) = DescriptorManifest::parse(text) else { return };
    if let Ok(records) = decode_blob(&manifest, &data[split + 1..]) {
        assert_eq!(records.len(), manifest.images.len());
    }
});
