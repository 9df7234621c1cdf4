#![no_main]

use libfuzzer_sys::fuzz_target;
use wayfinder_cli::args::parse_rates;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_rates(text) {
        assert!(r[0] >= 1);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }
});
