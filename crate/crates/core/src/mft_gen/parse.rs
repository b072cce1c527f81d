//! Tolerant readers for LLM answers. See `templates/GRAMMAR.md`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CasePair {
    pub summary: String,
    pub review: String,
}

impl CasePair {
    pub fn new(summary: impl Into<String>, review: impl Into<String>) -> Self {
        Self {
            summary: summary.into(),
            review: review.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedBlock {
    pub pairs: Vec<CasePair>,
    /// Set when no pair could be extracted.
    pub failed: bool,
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*[*_#>\-\s]*test\s*case\s*#?\s*(\d+)\s*[*_]*\s*(?:[:\-–.)]\s*)?(.*)$").expect("static regex")
    })
}

fn review_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*[*_#>\-\s]*(?:customer\s*)?review\s*[*_]*\s*:\s*(.*)$").expect("static regex")
    })
}

fn inline_review_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)[*_\s]*customer\s*review\s*[*_]*\s*:").expect("static regex"))
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\u{201c}' | '\u{201d}')
}

/// Trims, drops markdown emphasis and surrounding double quotes. Idempotent.
pub fn clean_field(s: &str) -> String {
    let mut cur: String = s.chars().filter(|&c| c != '*').collect();
    loop {
        let next = {
            let t = cur.trim().trim_matches('_').trim();
            let mut chars = t.chars();
            match (chars.next(), chars.next_back()) {
                (Some(a), Some(b)) if is_quote(a) && is_quote(b) => {
                    let inner = &t[a.len_utf8()..t.len() - b.len_utf8()];
                    if inner.chars().any(is_quote) {
                        t.to_string()
                    } else {
                        inner.to_string()
                    }
                }
                _ => t.to_string(),
            }
        };
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Extracts `Test Case N: summary` / `Customer Review: text` pairs in order.
pub fn parse_mft_block(text: &str) -> ParsedBlock {
    struct Open {
        summary: String,
        review: Option<String>,
    }

    fn close(open: Option<Open>, pairs: &mut Vec<CasePair>) {
        if let Some(Open {
            summary,
            review: Some(review),
        }) = open
        {
            let review = clean_field(&review);
            if !review.is_empty() {
                pairs.push(CasePair {
                    summary: clean_field(&summary),
                    review,
                });
            }
        }
    }

    let mut pairs = Vec::new();
    let mut open: Option<Open> = None;
    // True while non-blank lines extend the current review.
    let mut continuing = false;

    for line in text.lines() {
        if let Some(cap) = header_re().captures(line) {
            close(open.take(), &mut pairs);
            let rest = cap.get(2).map_or("", |m| m.as_str());
            match inline_review_re().find(rest) {
                Some(m) => {
                    open = Some(Open {
                        summary: rest[..m.start()].to_string(),
                        review: Some(rest[m.end()..].to_string()),
                    });
                    continuing = true;
                }
                None => {
                    open = Some(Open {
                        summary: rest.to_string(),
                        review: None,
                    });
                    continuing = false;
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continuing = false;
            continue;
        }
        let Some(current) = open.as_mut() else { continue };
        if let Some(cap) = review_re().captures(line) {
            if current.review.is_none() {
                current.review = Some(cap[1].to_string());
                continuing = true;
            } else {
                continuing = false;
            }
            continue;
        }
        if continuing {
            if let Some(r) = current.review.as_mut() {
                r.push(' ');
                r.push_str(line.trim());
            }
        }
    }
    close(open, &mut pairs);
    ParsedBlock {
        failed: pairs.is_empty(),
        pairs,
    }
}

/// The canonical layout, numbered from 1.
pub fn render_mft_block(pairs: &[CasePair]) -> String {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Test Case {}: {}\nCustomer Review: {}\n", i + 1, p.summary, p.review))
        .collect::<Vec<_>>()
        .join("\n")
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s|>)(\d{1,2})\s*[.):]\s+").expect("static regex"))
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^>]*>").expect("static regex"))
}

/// Items of a numbered list (`1. "a" 2. "b"` or one per line).
///
/// Only markers continuing the sequence 1, 2, 3, ... split items, so digits
/// inside an item do not. Text before `1.` is ignored and each item ends at its
/// line break.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let text = tag_re().replace_all(text, " ");
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut expected = 1;
    for cap in item_re().captures_iter(&text) {
        let n: usize = cap[1].parse().unwrap_or(0);
        if n == expected {
            let m = cap.get(0).expect("match");
            bounds.push((m.start(), m.end()));
            expected += 1;
        }
    }
    let mut items = Vec::new();
    for (i, &(_, body_start)) in bounds.iter().enumerate() {
        let end = bounds.get(i + 1).map_or(text.len(), |b| b.0);
        let body = &text[body_start..end];
        let line = body.lines().next().unwrap_or("");
        let item = clean_field(line);
        if !item.is_empty() {
            items.push(item);
        }
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_markers() {
        let r = parse_mft_block("hello world");
        assert!(r.pairs.is_empty());
        assert!(r.failed);
    }

    #[test]
    fn clean_is_idempotent() {
        for s in ["  **\"Hi\"**  ", "\u{201c}x\u{201d}", "\"a\" and \"b\"", "__x__", "\"\"\"\""] {
            let once = clean_field(s);
            assert_eq!(clean_field(&once), once, "{s:?}");
        }
        assert_eq!(clean_field("**\"Hi\"**"), "Hi");
        assert_eq!(clean_field("\"a\" and \"b\""), "\"a\" and \"b\"");
    }

    #[test]
    fn inline_review() {
        let r = parse_mft_block("Test Case 1: Price Customer Review: Too expensive.");
        assert_eq!(r.pairs, vec![CasePair::new("Price", "Too expensive.")]);
    }

    #[test]
    fn continuation_joined() {
        let r = parse_mft_block("Test Case 1: A\nCustomer Review: first half\nsecond half\n\nclosing prose");
        assert_eq!(r.pairs[0].review, "first half second half");
    }

    #[test]
    fn numbered_list_on_one_line() {
        let items = parse_numbered_list(r#"Sure! 1. "One thing." 2. "Two 3 things." 3. "Three.""#);
        assert_eq!(items, vec!["One thing.", "Two 3 things.", "Three."]);
    }

    #[test]
    fn numbered_list_skips_out_of_sequence() {
        let items = parse_numbered_list("Here you go:\n1) A 5. B\n2) C\nHope this helps");
        assert_eq!(items, vec!["A 5. B", "C"]);
    }
}
