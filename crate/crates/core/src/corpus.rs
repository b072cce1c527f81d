//! Review ingestion, relabeling, class balancing and date-based splits.
//!
//! Raw rows carry a 1-5 star rating. Ratings map to a binary sentiment label
//! (1-2 negative, 4-5 positive, 3 dropped), headline and body are joined into
//! one text, and the majority class is down-sampled to the minority count.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary sentiment label. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    /// Star rating to label; `None` for the dropped neutral rating.
    pub fn from_stars(stars: u8) -> Option<Label> {
        match stars {
            1 | 2 => Some(Label::Negative),
            4 | 5 => Some(Label::Positive),
            _ => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "negative" | "neg" => Ok(Label::Negative),
            "1" | "positive" | "pos" => Ok(Label::Positive),
            other => Err(Error::Parse(format!("not a label: `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// Capitalized form used in report headers ("Train MFT 1").
    pub fn title(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Validation => "Validation",
            Split::Test => "Test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("not a split: `{other}`"))),
        }
    }
}

/// One labeled review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub category: String,
    pub date: NaiveDate,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub documents: Vec<Document>,
}

impl LabeledCorpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            if doc.text.trim().is_empty() {
                return Err(Error::Invalid(format!("document `{}` has empty text", doc.id)));
            }
        }
        Ok(Self { documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for doc in &self.documents {
            *counts.entry(doc.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn split(&self, split: Split) -> LabeledCorpus {
        LabeledCorpus {
            documents: self
                .documents
                .iter()
                .filter(|d| d.split == Some(split))
                .cloned()
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.documents)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(crate::io::read_jsonl(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "tsv" => Ok(InputFormat::Tsv),
            "jsonl" | "json-lines" | "ndjson" => Ok(InputFormat::Jsonl),
            other => Err(Error::Invalid(format!("unknown input format `{other}`"))),
        }
    }
}

/// Source column names. Defaults follow the public Amazon US reviews dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    /// Optional; rows get positional ids (`row-N`) when the column is absent.
    pub id: String,
    pub headline: String,
    pub body: String,
    pub stars: String,
    pub category: String,
    pub date: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "review_id".into(),
            headline: "review_headline".into(),
            body: "review_body".into(),
            stars: "star_rating".into(),
            category: "product_category".into(),
            date: "review_date".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub headline: String,
    pub body: String,
    pub stars: u8,
    pub category: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawCorpus {
    pub records: Vec<RawRecord>,
    /// Rows whose rating or date did not parse.
    pub skipped: usize,
}

pub fn ingest(path: &Path, format: InputFormat, columns: &ColumnMap) -> Result<RawCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, format, columns)
}

pub fn ingest_reader(reader: impl Read, format: InputFormat, columns: &ColumnMap) -> Result<RawCorpus> {
    let mut out = RawCorpus::default();
    let mut seen = HashSet::new();
    let mut push = |out: &mut RawCorpus, row: Option<RawRecord>| -> Result<()> {
        match row {
            Some(r) => {
                if !seen.insert(r.id.clone()) {
                    return Err(Error::DuplicateId(r.id));
                }
                out.records.push(r);
            }
            None => out.skipped += 1,
        }
        Ok(())
    };

    match format {
        InputFormat::Csv | InputFormat::Tsv => {
            let mut builder = csv::ReaderBuilder::new();
            builder.flexible(true);
            if format == InputFormat::Tsv {
                // The public dumps are tab separated with raw quote characters in the text.
                builder.delimiter(b'\t').quoting(false);
            }
            let mut rdr = builder.from_reader(reader);
            let headers = rdr.headers()?.clone();
            let find = |name: &str| headers.iter().position(|h| h.trim() == name);
            let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
            let id_col = find(&columns.id);
            let cols = [
                need(&columns.headline)?,
                need(&columns.body)?,
                need(&columns.stars)?,
                need(&columns.category)?,
                need(&columns.date)?,
            ];
            for (rowno, rec) in rdr.records().enumerate() {
                let rec = match rec {
                    Ok(r) => r,
                    Err(_) => {
                        out.skipped += 1;
                        continue;
                    }
                };
                let get = |i: usize| rec.get(i).unwrap_or("");
                let id = id_col
                    .map(|i| get(i).trim().to_string())
                    .filter(|s| !s.is_empty())
                    .unwrap_or_else(|| format!("row-{}", rowno + 1));
                let fields = [get(cols[0]), get(cols[1]), get(cols[2]), get(cols[3]), get(cols[4])];
                push(&mut out, build_record(id, fields))?;
            }
        }
        InputFormat::Jsonl => {
            let mut text = String::new();
            let mut reader = reader;
            reader
                .read_to_string(&mut text)
                .map_err(|e| Error::Parse(format!("input is not UTF-8: {e}")))?;
            let mut checked_columns = false;
            for (rowno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let obj: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(line) {
                    Ok(o) => o,
                    Err(_) => {
                        out.skipped += 1;
                        continue;
                    }
                };
                if !checked_columns {
                    for name in [&columns.headline, &columns.body, &columns.stars, &columns.category, &columns.date] {
                        if !obj.contains_key(name.as_str()) {
                            return Err(Error::MissingColumn(name.clone()));
                        }
                    }
                    checked_columns = true;
                }
                let field = |name: &str| -> String {
                    match obj.get(name) {
                        Some(serde_json::Value::String(s)) => s.clone(),
                        Some(serde_json::Value::Null) | None => String::new(),
                        Some(other) => other.to_string(),
                    }
                };
                let id = Some(field(&columns.id))
                    .filter(|s| !s.trim().is_empty())
                    .unwrap_or_else(|| format!("row-{}", rowno + 1));
                let values = [
                    field(&columns.headline),
                    field(&columns.body),
                    field(&columns.stars),
                    field(&columns.category),
                    field(&columns.date),
                ];
                let refs = [
                    values[0].as_str(),
                    values[1].as_str(),
                    values[2].as_str(),
                    values[3].as_str(),
                    values[4].as_str(),
                ];
                push(&mut out, build_record(id, refs))?;
            }
        }
    }

    if out.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn build_record(id: String, [headline, body, stars, category, date]: [&str; 5]) -> Option<RawRecord> {
    let stars = parse_stars(stars)?;
    let date = parse_date(date)?;
    Some(RawRecord {
        id,
        headline: decode_text(headline),
        body: decode_text(body),
        stars,
        category: category.trim().to_string(),
        date,
    })
}

fn parse_stars(s: &str) -> Option<u8> {
    let s = s.trim();
    let v: f64 = s.parse().ok()?;
    if v.fract() != 0.0 || !(1.0..=5.0).contains(&v) {
        return None;
    }
    Some(v as u8)
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%Y-%m-%d", "%m/%d/%Y", "%Y/%m/%d"]
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(s, fmt).ok())
}

fn decode_text(s: &str) -> String {
    html_escape::decode_html_entities(s.trim()).into_owned()
}

/// Relabels by star rating and joins headline and body. Neutral ratings and
/// records whose joined text is empty are dropped.
pub fn relabel(raw: &RawCorpus) -> Result<LabeledCorpus> {
    let documents: Vec<Document> = raw
        .records
        .iter()
        .filter_map(|r| {
            let label = Label::from_stars(r.stars)?;
            let text = join_text(&r.headline, &r.body);
            if text.is_empty() {
                return None;
            }
            Some(Document {
                id: r.id.clone(),
                text,
                label,
                category: r.category.clone(),
                date: r.date,
                split: None,
            })
        })
        .collect();
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    LabeledCorpus::new(documents)
}

pub fn join_text(headline: &str, body: &str) -> String {
    match (headline.trim(), body.trim()) {
        ("", b) => b.to_string(),
        (h, "") => h.to_string(),
        (h, b) => format!("{h} {b}"),
    }
}

/// Down-samples every class to the size of the smallest one, uniformly without
/// replacement. Surviving documents keep their original order.
pub fn balance(corpus: &LabeledCorpus, seed: u64) -> Result<LabeledCorpus> {
    let counts = corpus.class_counts();
    let minority = Label::ALL
        .iter()
        .map(|l| counts.get(l).copied().unwrap_or(0))
        .min()
        .unwrap_or(0);
    if minority == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; corpus.len()];
    for label in Label::ALL {
        let members: Vec<usize> = corpus
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| d.label == label)
            .map(|(i, _)| i)
            .collect();
        if members.len() == minority {
            members.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in index::sample(&mut rng, members.len(), minority) {
                keep[members[j]] = true;
            }
        }
    }
    Ok(LabeledCorpus {
        documents: corpus
            .documents
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(d, _)| d.clone())
            .collect(),
    })
}

/// Relabel then balance globally.
pub fn preprocess(raw: &RawCorpus, balance_seed: u64) -> Result<LabeledCorpus> {
    balance(&relabel(raw)?, balance_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub validation_end: NaiveDate,
}

impl SplitSpec {
    pub fn new(train_end: NaiveDate, validation_end: NaiveDate) -> Result<Self> {
        if train_end >= validation_end {
            return Err(Error::Invalid(format!(
                "train_end {train_end} must be before validation_end {validation_end}"
            )));
        }
        Ok(Self { train_end, validation_end })
    }

    pub fn assign(&self, date: NaiveDate) -> Split {
        if date <= self.train_end {
            Split::Train
        } else if date <= self.validation_end {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_end: NaiveDate::from_ymd_opt(2014, 4, 13).unwrap(),
            validation_end: NaiveDate::from_ymd_opt(2014, 12, 31).unwrap(),
        }
    }
}

pub fn split_by_date(corpus: &LabeledCorpus, spec: &SplitSpec) -> LabeledCorpus {
    LabeledCorpus {
        documents: corpus
            .documents
            .iter()
            .map(|d| Document {
                split: Some(spec.assign(d.date)),
                ..d.clone()
            })
            .collect(),
    }
}

/// Where class balancing happens relative to the date split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    #[default]
    BeforeSplit,
    PerSplit,
    None,
}

pub fn build_corpus(raw: &RawCorpus, spec: &SplitSpec, mode: BalanceMode, seed: u64) -> Result<LabeledCorpus> {
    let labeled = relabel(raw)?;
    match mode {
        BalanceMode::BeforeSplit => Ok(split_by_date(&balance(&labeled, seed)?, spec)),
        BalanceMode::None => Ok(split_by_date(&labeled, spec)),
        BalanceMode::PerSplit => {
            let split = split_by_date(&labeled, spec);
            let mut documents = Vec::new();
            for s in [Split::Train, Split::Validation, Split::Test] {
                let part = split.split(s);
                if part.is_empty() {
                    continue;
                }
                documents.extend(balance(&part, seed)?.documents);
            }
            LabeledCorpus::new(documents)
        }
    }
}
