#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::geometry::parse_coords;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_coords(data) {
        if let Some((_, first)) = rows.first() {
            assert!(rows.iter().all(|(_, c)| c.len() == first.len() && c.iter().all(|x| x.is_finite())));
        }
    }
});
