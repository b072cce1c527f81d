#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::suite::parse_rules;

fuzz_target!(|data: &[u8]| {
    let _ = parse_rules(data);
});
