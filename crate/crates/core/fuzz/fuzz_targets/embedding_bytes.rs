#![no_main]

use libfuzzer_sys::fuzz_target;
use mftgen::embedding::EmbeddingMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = EmbeddingMatrix::from_bytes(data) {
        let bytes = m.to_bytes();
        let again = EmbeddingMatrix::from_bytes(&bytes).expect("re-encoded matrix decodes");
        assert_eq!(again.to_bytes(), bytes);
    }
});
