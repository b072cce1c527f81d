//! A synthetic review corpus with a matching scripted chat model.
//!
//! Documents fall into topics with disjoint vocabularies, so feature-hashed
//! embeddings cluster cleanly. Replies are pure functions of the request tag,
//! which makes every collision between generated texts predictable:
//!
//! - cases `1..cases_per_doc-1` mention the seed, so they never collide;
//! - the last case of a document is the same text under every seed;
//! - the first paraphrase of a case is the case shouted, which normalizes
//!   back to the original.

use std::fmt::Write as _;
use std::path::Path;

use super::{ChatCall, MockReply};
use crate::corpus::Label;
use crate::error::{Error, Result};

const VOCAB: [[&str; 6]; 8] = [
    ["puzzle", "jigsaw", "pieces", "cardboard", "picture", "edges"],
    ["doll", "hair", "dress", "shoes", "ribbon", "face"],
    ["truck", "wheels", "remote", "battery", "motor", "speed"],
    ["blocks", "bricks", "tower", "castle", "stack", "colors"],
    ["paint", "brushes", "easel", "canvas", "palette", "markers"],
    ["kite", "string", "wind", "tail", "frame", "sky"],
    ["train", "tracks", "engine", "carriage", "station", "whistle"],
    ["drum", "sticks", "rhythm", "noise", "cymbal", "beat"],
];

pub const POSITIVE_WORD: &str = "lovely";
pub const NEGATIVE_WORD: &str = "dreadful";

/// Marks paraphrases that the scripted classifier gets wrong.
pub const CONFUSING_VARIANT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub topics: usize,
    pub docs_per_topic: usize,
    pub cases_per_doc: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            topics: 5,
            docs_per_topic: 30,
            cases_per_doc: 4,
        }
    }
}

fn polarity_word(label: Label) -> &'static str {
    match label {
        Label::Positive => POSITIVE_WORD,
        Label::Negative => NEGATIVE_WORD,
    }
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n'], " ")
}

impl Scenario {
    pub fn doc_id(&self, topic: usize, j: usize) -> String {
        format!("t{topic}-{j:03}")
    }

    fn parse_doc(&self, doc_id: &str) -> Option<(usize, usize)> {
        let (t, j) = doc_id.strip_prefix('t')?.split_once('-')?;
        let (t, j) = (t.parse().ok()?, j.parse().ok()?);
        (t < self.topics && j < self.docs_per_topic).then_some((t, j))
    }

    /// Even documents are positive.
    pub fn doc_label(&self, doc_id: &str) -> Option<Label> {
        self.parse_doc(doc_id)
            .map(|(_, j)| if j % 2 == 0 { Label::Positive } else { Label::Negative })
    }

    pub fn doc_text(&self, topic: usize, j: usize) -> (String, String) {
        let v = VOCAB[topic % VOCAB.len()];
        let word = polarity_word(if j.is_multiple_of(2) { Label::Positive } else { Label::Negative });
        let headline = format!("{} {}", v[0], v[1]);
        let body = format!("The {} and {} were {word}. {} {} number {j}.", v[2], v[3], v[4], v[5]);
        (headline, body)
    }

    /// Header line and rows in the default raw column layout.
    pub fn corpus_tsv(&self) -> Result<String> {
        if self.topics > VOCAB.len() {
            return Err(Error::Invalid(format!("at most {} topics", VOCAB.len())));
        }
        let mut out = String::from("review_id\treview_headline\treview_body\tstar_rating\tproduct_category\treview_date\n");
        let start = chrono::NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date");
        for t in 0..self.topics {
            for j in 0..self.docs_per_topic {
                let (h, b) = self.doc_text(t, j);
                let stars = if j % 2 == 0 { 5 } else { 1 };
                let date = start + chrono::Days::new((t * self.docs_per_topic + j) as u64 % 400);
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{stars}\tToys\t{date}",
                    self.doc_id(t, j),
                    tsv_field(&h),
                    tsv_field(&b)
                );
            }
        }
        Ok(out)
    }

    pub fn write_corpus(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.corpus_tsv()?.as_bytes())
    }

    /// Text of case `i` (1-based) generated from `doc_id` under `seed`.
    pub fn case_text(&self, seed: u64, doc_id: &str, i: usize) -> Option<String> {
        let (t, _) = self.parse_doc(doc_id)?;
        let v = VOCAB[t % VOCAB.len()];
        let word = polarity_word(self.doc_label(doc_id)?);
        Some(if i == self.cases_per_doc {
            format!("Every {} on {doc_id} is {word}.", v[3])
        } else {
            format!("Run {seed} case {i} says the {} of {doc_id} felt {word}.", v[(i - 1) % 6])
        })
    }

    fn case_summary(&self, doc_id: &str, i: usize) -> String {
        let t = self.parse_doc(doc_id).map_or(0, |(t, _)| t);
        format!("{} aspect {i}", VOCAB[t % VOCAB.len()][(i - 1) % 6])
    }

    fn block(&self, seed: u64, doc_id: &str) -> Option<String> {
        let mut out = String::from("Sure! Here are the minimum functionality test (MFT) samples:\n\n");
        for i in 1..=self.cases_per_doc {
            let _ = writeln!(
                out,
                "Test Case {i}: {}\nCustomer Review: {}\n",
                self.case_summary(doc_id, i),
                self.case_text(seed, doc_id, i)?
            );
        }
        Some(out)
    }

    /// Original text behind a case id `s{seed}-{doc_id}-{i}`.
    pub fn text_for_case(&self, case_id: &str) -> Option<String> {
        let rest = case_id.strip_prefix('s')?;
        let (seed, rest) = rest.split_once('-')?;
        let (doc, i) = rest.rsplit_once('-')?;
        self.case_text(seed.parse().ok()?, doc, i.parse().ok()?)
    }

    pub fn paraphrases(parent: &str, n: usize) -> Vec<String> {
        let stem = parent.trim_end_matches('.');
        (1..=n)
            .map(|j| {
                if j == 1 {
                    format!("{}!!", parent.to_uppercase())
                } else {
                    format!("{stem}, put another way ({j}).")
                }
            })
            .collect()
    }

    /// Reply for one chat call, decided by its tag alone.
    pub fn reply(&self, call: &ChatCall) -> MockReply {
        let tag = call.tag.as_deref().unwrap_or_default();
        let tag = tag.strip_suffix("/retry1").unwrap_or(tag);
        let parts: Vec<&str> = tag.split('/').collect();
        let text = match parts.as_slice() {
            ["fewshot", _, _, polarity] => {
                let word = if *polarity == "pos" { POSITIVE_WORD } else { NEGATIVE_WORD };
                Some(format!(
                    "Test Case 1: Overall impression\nCustomer Review: The toy was {word}.\n\n\
                     Test Case 2: Value\nCustomer Review: For the price it felt {word}.\n"
                ))
            }
            ["gen", _, seed, doc] => seed.strip_prefix('s').and_then(|s| s.parse().ok()).and_then(|s| self.block(s, doc)),
            ["para", case_id] => self.text_for_case(case_id).map(|parent| {
                let n = call.prompt.split_whitespace().find_map(|w| w.parse::<usize>().ok()).unwrap_or(5);
                let mut out = format!("Sure! Here are {n} rephrased versions of the customer review:\n\n");
                for (j, p) in Self::paraphrases(&parent, n).iter().enumerate() {
                    let _ = writeln!(out, "{}. \"{p}\"", j + 1);
                }
                out
            }),
            ["qc", _] => {
                let p = call.prompt.to_lowercase();
                let label = if p.contains(POSITIVE_WORD) {
                    "Positive"
                } else if p.contains(NEGATIVE_WORD) {
                    "Negative"
                } else {
                    "Hard to Decide"
                };
                Some(format!("Label: {label}\nReason: The wording decides it."))
            }
            _ => None,
        };
        text.map_or_else(|| MockReply::Status(404, format!("unscripted tag `{tag}`")), MockReply::Text)
    }

    /// A keyword classifier that misreads one paraphrase variant.
    pub fn predict(text: &str) -> Label {
        let t = text.to_lowercase();
        let positive = t.contains(POSITIVE_WORD);
        let confused = t.contains(&format!("put another way ({CONFUSING_VARIANT})"));
        if positive != confused {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// Config for a recorded run against a server at `url`, in `dir`.
    pub fn config_toml(&self, url: &str, dir: &Path) -> String {
        let p = |name: &str| dir.join(name).to_string_lossy().replace('\\', "/");
        format!(
            r#"mode = "record"

[paths]
corpus = "{corpus}"
output = "{output}"
cache = "{cache}"
transcript = "{transcript}"

[embedding.provider]
base_url = "{url}"
model_name = "mock-embed"
batch_size = 32

[chat]
base_url = "{url}"
model_name = "mock-chat"
concurrency = 8

[cluster]
k = {k}

[generate]
seeds = [1, 2, 3]
splits = ["train"]
paraphrase_n = 5

[topics]
k = 4

[[eval.models]]
name = "keyword-baseline"
url = "{url}/predict"
"#,
            corpus = p("reviews.tsv"),
            output = p("out"),
            cache = p("cache"),
            transcript = p("transcript.jsonl"),
            k = self.topics,
        )
    }
}
