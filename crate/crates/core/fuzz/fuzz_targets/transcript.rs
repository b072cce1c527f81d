#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::llm::Transcript;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Transcript::parse(data) {
        for r in t.records() {
            assert!(t.get(&r.tag).is_some());
        }
    }
});
