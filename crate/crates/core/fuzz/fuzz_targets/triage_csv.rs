#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::qc::{parse_triage, triage_to_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_triage(data) {
        let csv = triage_to_csv(&records).expect("records serialize");
        assert_eq!(parse_triage(csv.as_slice()).expect("written file parses"), records);
    }
});
