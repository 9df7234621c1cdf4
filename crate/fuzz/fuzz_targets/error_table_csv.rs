#![no_main]

use libfuzzer_sys::fuzz_target;
use wayfinder_core::evaluation::{order_probability, ErrorTable};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(table) = ErrorTable::parse_csv(text) else { return };
    if let Ok(p) = order_probability(&table) {
        assert!((0.0..=1.0).contains(&p.p));
    }
    let again = ErrorTable::parse_csv(&table.to_csv()).expect("written table parses");
    assert_eq!(again.cells.len(), table.cells.len());
});
