#![no_main]

use libfuzzer_sys::fuzz_target;
use wayfinder_core::descriptor_io::DescriptorManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = DescriptorManifest::parse(text) {
            let _ = m.expected_blob_len();
            let again = DescriptorManifest::parse(&m.to_json()).expect("serialized manifest parses");
            assert_eq!(again, m);
        }
    }
});
