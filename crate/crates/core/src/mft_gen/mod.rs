//! Test-case generation: prompts, answer parsing, paraphrasing and dedup.

mod generate;
mod parse;
pub mod template;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Split};
use crate::error::{Error, Result};

pub use generate::{
    fewshot_tag, generation_tag, paraphrase_tag, render_example_block, run_generation, select_fewshot_source,
    GenerationLog, GenerationLogRow, GenerationOutput, Generator, MAX_CASES_PER_DOC,
};
pub use parse::{clean_field, parse_mft_block, parse_numbered_list, render_mft_block, CasePair, ParsedBlock};

/// Label after quality control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcLabel {
    Positive,
    Negative,
    Hard,
    Unreviewed,
}

impl QcLabel {
    pub fn as_label(self) -> Option<Label> {
        match self {
            QcLabel::Positive => Some(Label::Positive),
            QcLabel::Negative => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QcLabel::Positive => "positive",
            QcLabel::Negative => "negative",
            QcLabel::Hard => "hard",
            QcLabel::Unreviewed => "unreviewed",
        }
    }
}

impl From<Label> for QcLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Positive => QcLabel::Positive,
            Label::Negative => QcLabel::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub polarity: Label,
    pub source_doc_id: String,
    pub prompt_used: String,
    /// The Q/A block inserted into generation prompts.
    pub rendered_example: String,
    pub parsed_cases: Vec<CasePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MftCase {
    pub id: String,
    pub text: String,
    pub summary: String,
    pub inherited_label: Label,
    pub qc_label: QcLabel,
    pub source_doc_id: String,
    pub cluster: usize,
    pub seed: u64,
    pub paraphrase_of: Option<String>,
    pub mft_topic: Option<usize>,
}

impl MftCase {
    pub fn is_paraphrase(&self) -> bool {
        self.paraphrase_of.is_some()
    }

    /// The label used for scoring: the QC label when decided, else the inherited one.
    pub fn expected_label(&self) -> Label {
        self.qc_label.as_label().unwrap_or(self.inherited_label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub split: Option<Split>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MftSuite {
    pub name: String,
    pub cases: Vec<MftCase>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct SuiteMeta {
    name: String,
    provenance: Provenance,
    cases: usize,
}

impl MftSuite {
    pub fn new(name: impl Into<String>, cases: Vec<MftCase>, provenance: Provenance) -> Self {
        Self {
            name: name.into(),
            cases,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MftCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Unique ids and unique normalized texts.
    pub fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut texts = HashSet::new();
        for c in &self.cases {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::Invariant(format!("{}: duplicate case id `{}`", self.name, c.id)));
            }
            if !texts.insert(normalize_text(&c.text)) {
                return Err(Error::Invariant(format!("{}: duplicate text in case `{}`", self.name, c.id)));
            }
        }
        Ok(())
    }

    /// Writes `{stem}.jsonl` (cases) and `{stem}.meta.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::io::write_jsonl(&dir.join(format!("{stem}.jsonl")), &self.cases)?;
        crate::io::write_json(
            &dir.join(format!("{stem}.meta.json")),
            &SuiteMeta {
                name: self.name.clone(),
                provenance: self.provenance.clone(),
                cases: self.cases.len(),
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: SuiteMeta = crate::io::read_json(&dir.join(format!("{stem}.meta.json")))?;
        let cases: Vec<MftCase> = crate::io::read_jsonl(&dir.join(format!("{stem}.jsonl")))?;
        if cases.len() != meta.cases {
            return Err(Error::Invariant(format!(
                "{stem}: meta lists {} cases, file has {}",
                meta.cases,
                cases.len()
            )));
        }
        Ok(Self {
            name: meta.name,
            cases,
            provenance: meta.provenance,
        })
    }
}

/// Case-folded, whitespace collapsed, terminal punctuation removed.
pub fn normalize_text(text: &str) -> String {
    let folded = text.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || c == '\u{2026}')
        .to_string()
}

/// Keeps the first case for each normalized text.
pub fn dedup(cases: &[MftCase]) -> Vec<MftCase> {
    let mut seen = HashSet::new();
    cases
        .iter()
        .filter(|c| seen.insert(normalize_text(&c.text)))
        .cloned()
        .collect()
}
