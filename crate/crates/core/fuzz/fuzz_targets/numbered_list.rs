#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::mft_gen::parse_numbered_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for item in parse_numbered_list(text) {
            assert!(!item.trim().is_empty());
        }
    }
});
