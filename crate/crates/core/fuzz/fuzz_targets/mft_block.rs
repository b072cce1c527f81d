#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::mft_gen::{clean_field, parse_mft_block};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let block = parse_mft_block(text);
    assert_eq!(block.failed, block.pairs.is_empty());
    for p in &block.pairs {
        assert!(!p.review.is_empty());
        assert_eq!(clean_field(&p.review), p.review);
        assert_eq!(clean_field(&p.summary), p.summary);
    }
});
