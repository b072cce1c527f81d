#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::corpus::{ingest_reader, ColumnMap, InputFormat};

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let format = match selector % 3 {
        0 => InputFormat::Csv,
        1 => InputFormat::Tsv,
        _ => InputFormat::Jsonl,
    };
    let _ = ingest_reader(rest, format, &ColumnMap::default());
});
