//! Worked model answers and layout variants for the block, label and list parsers.

mod common;

use common::fixtures::{album_pairs, assert_round_trip, fixture, lego_pairs, pairs, variants, AB, KINDLE_SUMMARIES};
use mftgen::mft_gen::{parse_mft_block, parse_numbered_list};
use mftgen::qc::{parse_verdict, LlmLabel};

#[test]
fn album_answer() {
    let got = parse_mft_block(&fixture("album_answer.txt"));
    assert!(!got.failed);
    assert_eq!(got.pairs.len(), 4);
    assert_eq!(got.pairs[0].summary, "Complex Sound and Maturity");
    assert_eq!(got.pairs, album_pairs());
    assert_round_trip(&got.pairs);
}

#[test]
fn lego_block_with_blank_lines() {
    let got = parse_mft_block(&fixture("lego_block.txt")).pairs;
    assert_eq!(got, lego_pairs());
    assert_round_trip(&got);
}

#[test]
fn kindle_block() {
    let got = parse_mft_block(&fixture("kindle_block.txt")).pairs;
    let summaries: Vec<&str> = got.iter().map(|p| p.summary.as_str()).collect();
    assert_eq!(summaries, KINDLE_SUMMARIES);
    assert_eq!(
        got[1].review,
        "Now, this is what I call a truly enjoyable game - it's moved into my top five favorites on Kindle Fire, and I can't wait to play it again."
    );
    assert!(got[3].review.ends_with("the replay value is simply incredible."));
    assert_round_trip(&got);
}

#[test]
fn label_response_is_negative() {
    let (label, reason) = parse_verdict(&fixture("label_response.txt")).unwrap();
    assert_eq!(label, LlmLabel::Negative);
    assert_eq!(reason, "The sentence expresses dislike towards a product, indicating a negative sentiment.");
}

#[test]
fn rephrase_list_in_html() {
    assert_eq!(
        parse_numbered_list(&fixture("rephrase_list.txt")),
        [
            "Underwhelming experience with too much repetition.",
            "Disappointing read with too much dullness.",
            "Monotonous content without any excitement.",
            "A lackluster reading experience with too much redundancy.",
            "Uninspired writing with too much repetitive material.",
        ]
    );
}

#[test]
fn format_variants_all_parse() {
    let expected = pairs(&AB);
    let all = variants();
    assert!(all.len() >= 20);
    let failures: Vec<&str> = all
        .iter()
        .filter(|(_, text)| parse_mft_block(text).pairs != expected)
        .map(|(name, _)| *name)
        .collect();
    assert!(failures.is_empty(), "variants not parsed exactly: {failures:?}");
    assert_round_trip(&expected);
}

#[test]
fn answers_without_cases_fail() {
    for text in ["", "I'm sorry, I can't help with that.", "Test Case 1: only a header"] {
        let got = parse_mft_block(text);
        assert!(got.failed && got.pairs.is_empty(), "{text:?}");
    }
}

#[test]
fn label_variants() {
    let cases = [
        ("Label: Positive\nReason: Happy.", LlmLabel::Positive),
        ("Label: 2.Negative\nReason: Unhappy.", LlmLabel::Negative),
        ("**Label:** 3. Hard to Decide\n**Reason:** Mixed.", LlmLabel::Hard),
        ("Label: [Fill label here]\nReason: [Fill reason here]\nLabel: Negative\nReason: Sad.", LlmLabel::Negative),
        ("label: positive reason: likes it", LlmLabel::Positive),
    ];
    for (text, want) in cases {
        assert_eq!(parse_verdict(text).map(|v| v.0), Some(want), "{text:?}");
    }
    assert_eq!(parse_verdict("No idea."), None);
}

#[test]
fn numbered_list_variants() {
    let want = ["First one.", "Second one."];
    for text in [
        "1. \"First one.\"\n2. \"Second one.\"",
        "1) First one.\n2) Second one.",
        "Sure! Here you go:\n\n1. First one.\n2. Second one.\n\nHope that helps.",
        "<ol><li>1. First one.</li><li>2. Second one.</li></ol>",
        "1: **First one.**\n2: **Second one.**",
    ] {
        assert_eq!(parse_numbered_list(text), want, "{text:?}");
    }
}
