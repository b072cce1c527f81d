//! Model answers shared by the parser tests and the acceptance run.

use mftgen::mft_gen::{parse_mft_block, render_mft_block, CasePair};

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn pairs(items: &[(&str, &str)]) -> Vec<CasePair> {
    items.iter().map(|(s, r)| CasePair::new(*s, *r)).collect()
}

pub fn assert_round_trip(p: &[CasePair]) {
    assert_eq!(parse_mft_block(&render_mft_block(p)).pairs, p);
}

pub fn album_pairs() -> Vec<CasePair> {
    pairs(&[
        ("Complex Sound and Maturity", "This album showcases McCartney's growth as a composer and his ability to create intricate sounds that are both timeless and cutting-edge."),
        ("Flow and Structure", "The seamless flow of the album, combined with its thoughtful structure, makes it a cohesive and immersive listening experience that rewards repeated plays."),
        ("Standout Tracks", "From the opening notes of \"Follow Me,\" it's clear that this album is something special, with each subsequent track building upon the previous one to create a truly unforgettable listen."),
        ("Emotional Resonance", "With its themes of love, loss, and renewal, this album resonates deeply on an emotional level, making it a must-listen for anyone who values authenticity and heartfelt songwriting."),
    ])
}

pub fn lego_pairs() -> Vec<CasePair> {
    pairs(&[
        ("Disappointment with size", "Tiny box for the price! Not worth it."),
        ("Lack of interest from children", "Kids aren't impressed with this set. Too small."),
        ("Overpricing of product", "Expensive for what you get. Not worth full price."),
    ])
}

pub const KINDLE_SUMMARIES: [&str; 4] = ["Addictiveness", "Favorite Game", "User Experience", "Replay Value"];

pub const AB: [(&str, &str); 2] = [("Build quality", "The bricks snap together firmly."), ("Price", "Too expensive for so few pieces.")];

/// Layouts seen in chat-model answers, all carrying the `AB` pairs.
pub fn variants() -> Vec<(&'static str, String)> {
    let v = |name, s: &str| (name, s.to_string());
    vec![
        v("canonical", "Test Case 1: Build quality\nCustomer Review: The bricks snap together firmly.\n\nTest Case 2: Price\nCustomer Review: Too expensive for so few pieces.\n"),
        v("bold labels", "**Test Case 1:** Build quality\n**Customer Review:** The bricks snap together firmly.\n\n**Test Case 2:** Price\n**Customer Review:** Too expensive for so few pieces."),
        v("bold whole line", "**Test Case 1: Build quality**\n**Customer Review: The bricks snap together firmly.**\n**Test Case 2: Price**\n**Customer Review: Too expensive for so few pieces.**"),
        v("hash and dash", "Test Case #1 - Build quality\nCustomer Review: The bricks snap together firmly.\nTest Case #2 - Price\nCustomer Review: Too expensive for so few pieces."),
        v("lower case", "test case 1: Build quality\ncustomer review: The bricks snap together firmly.\ntest case 2: Price\ncustomer review: Too expensive for so few pieces."),
        v("crlf", "Test Case 1: Build quality\r\nCustomer Review: The bricks snap together firmly.\r\n\r\nTest Case 2: Price\r\nCustomer Review: Too expensive for so few pieces.\r\n"),
        v("indented", "   Test Case 1: Build quality\n      Customer Review: The bricks snap together firmly.\n   Test Case 2: Price\n      Customer Review: Too expensive for so few pieces."),
        v("straight quotes", "Test Case 1: Build quality\nCustomer Review: \"The bricks snap together firmly.\"\nTest Case 2: Price\nCustomer Review: \"Too expensive for so few pieces.\""),
        v("curly quotes", "Test Case 1: \u{201c}Build quality\u{201d}\nCustomer Review: \u{201c}The bricks snap together firmly.\u{201d}\nTest Case 2: Price\nCustomer Review: \u{201c}Too expensive for so few pieces.\u{201d}"),
        v("inline review", "Test Case 1: Build quality Customer Review: The bricks snap together firmly.\nTest Case 2: Price Customer Review: Too expensive for so few pieces."),
        v("short label", "Test Case 1: Build quality\nReview: The bricks snap together firmly.\nTest Case 2: Price\nReview: Too expensive for so few pieces."),
        v("bullets", "- Test Case 1: Build quality\n- Customer Review: The bricks snap together firmly.\n- Test Case 2: Price\n- Customer Review: Too expensive for so few pieces."),
        v("headings", "### Test Case 1: Build quality\nCustomer Review: The bricks snap together firmly.\n\n### Test Case 2: Price\nCustomer Review: Too expensive for so few pieces."),
        v("wrapped review", "Test Case 1: Build quality\nCustomer Review: The bricks snap\ntogether firmly.\n\nTest Case 2: Price\nCustomer Review: Too expensive for\nso few pieces."),
        v("preamble and epilogue", "Sure! Here are the test cases:\n\nTest Case 1: Build quality\nCustomer Review: The bricks snap together firmly.\n\nTest Case 2: Price\nCustomer Review: Too expensive for so few pieces.\n\nI hope these help! Let me know if you need more."),
        v("dot separator", "Test Case 1. Build quality\nCustomer Review: The bricks snap together firmly.\nTest Case 2. Price\nCustomer Review: Too expensive for so few pieces."),
        v("paren separator", "Test Case 1) Build quality\nCustomer Review: The bricks snap together firmly.\nTest Case 2) Price\nCustomer Review: Too expensive for so few pieces."),
        v("loose spacing", "Test  Case   1 :   Build quality  \nCustomer   Review :   The bricks snap together firmly.  \nTest Case 2  :  Price\nCustomer Review  :  Too expensive for so few pieces."),
        v("no space", "TestCase 1: Build quality\nCustomerReview: The bricks snap together firmly.\nTestCase 2: Price\nCustomerReview: Too expensive for so few pieces."),
        v("en dash", "Test Case 1 \u{2013} Build quality\nCustomer Review: The bricks snap together firmly.\nTest Case 2 \u{2013} Price\nCustomer Review: Too expensive for so few pieces."),
        v("tabs", "Test Case 1:\tBuild quality\nCustomer Review:\tThe bricks snap together firmly.\nTest Case 2:\tPrice\nCustomer Review:\tToo expensive for so few pieces."),
        v("italic summary", "Test Case 1: *Build quality*\nCustomer Review: The bricks snap together firmly.\nTest Case 2: _Price_\nCustomer Review: Too expensive for so few pieces."),
        v("underscored label", "Test Case 1: Build quality\n__Customer Review:__ The bricks snap together firmly.\nTest Case 2: Price\n__Customer Review:__ Too expensive for so few pieces."),
        v("dangling header", "Test Case 1: Build quality\nCustomer Review: The bricks snap together firmly.\nTest Case 2: Something unfinished\n\nTest Case 3: Price\nCustomer Review: Too expensive for so few pieces."),
        v("blank line inside pair", "Test Case 1: Build quality\n\nCustomer Review: The bricks snap together firmly.\n\n\nTest Case 2: Price\n\nCustomer Review: Too expensive for so few pieces."),
        v("quote block", "> Test Case 1: Build quality\n> Customer Review: The bricks snap together firmly.\n> Test Case 2: Price\n> Customer Review: Too expensive for so few pieces."),
    ]
}
