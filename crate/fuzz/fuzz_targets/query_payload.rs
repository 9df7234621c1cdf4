#![no_main]

use libfuzzer_sys::fuzz_target;
use wayfinder_service::payload::{decode_query, encode_query, QueryPayload};

fuzz_target!(|data: &[u8]| {
    let Ok(p) = serde_json::from_slice::<QueryPayload>(data) else { return };
    for (g, l) in [(4, 2), (p.global.dim, p.locals.dim)] {
        if let Ok(q) = decode_query(&p, g, l) {
            let back = decode_query(&encode_query(&q), g, l).expect("encoded query decodes");
            assert_eq!(back, q);
        }
    }
});
