#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::eval::parse_predictions;

fuzz_target!(|data: &[u8]| {
    let _ = parse_predictions(data);
});
