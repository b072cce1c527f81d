//! LLM label checks and the human triage round trip.
//!
//! Every case gets an LLM verdict. Cases the model calls hard, or labels
//! differently from their source document, go to a triage CSV that a reviewer
//! edits; [`apply_triage`] then folds the decisions back into the suite.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway};
use crate::mft_gen::template::LABEL;
use crate::mft_gen::{MftCase, MftSuite, QcLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmLabel {
    Positive,
    Negative,
    Hard,
}

impl LlmLabel {
    pub fn as_label(self) -> Option<Label> {
        match self {
            LlmLabel::Positive => Some(Label::Positive),
            LlmLabel::Negative => Some(Label::Negative),
            LlmLabel::Hard => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LlmLabel::Positive => "positive",
            LlmLabel::Negative => "negative",
            LlmLabel::Hard => "hard",
        }
    }
}

impl fmt::Display for LlmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LlmLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(LlmLabel::Positive),
            "negative" => Ok(LlmLabel::Negative),
            "hard" => Ok(LlmLabel::Hard),
            other => Err(Error::Parse(format!("unknown llm label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub case_id: String,
    pub llm_label: LlmLabel,
    pub reason: String,
    pub agrees_with_inherited: bool,
}

impl QcVerdict {
    pub fn new(case: &MftCase, llm_label: LlmLabel, reason: impl Into<String>) -> Self {
        Self {
            case_id: case.id.clone(),
            llm_label,
            reason: reason.into(),
            agrees_with_inherited: llm_label.as_label() == Some(case.inherited_label),
        }
    }

    pub fn flagged(&self) -> bool {
        !self.agrees_with_inherited
    }
}

fn label_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*[*_#>\-\s]*label\s*[*_]*\s*:\s*(.*)$").expect("static regex"))
}

fn reason_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)[*_\s]*reason\s*[*_]*\s*:\s*(.*)$").expect("static regex"))
}

fn label_value(raw: &str) -> Option<LlmLabel> {
    let mut v: String = raw
        .chars()
        .filter(|c| !matches!(c, '*' | '_' | '[' | ']' | '"' | '\''))
        .collect::<String>()
        .trim()
        .to_ascii_lowercase();
    if let Some(rest) = v.strip_prefix(['1', '2', '3']) {
        let digit = v.as_bytes()[0];
        let rest = rest.trim_start_matches(['.', ')', ' ']).trim();
        if rest.is_empty() {
            return match digit {
                b'1' => Some(LlmLabel::Positive),
                b'2' => Some(LlmLabel::Negative),
                _ => Some(LlmLabel::Hard),
            };
        }
        v = rest.to_string();
    }
    if v.starts_with("positive") {
        Some(LlmLabel::Positive)
    } else if v.starts_with("negative") {
        Some(LlmLabel::Negative)
    } else if v.starts_with("hard") {
        Some(LlmLabel::Hard)
    } else {
        None
    }
}

fn clean_reason(s: &str) -> String {
    let t = s.trim().trim_matches('*').trim();
    if t.eq_ignore_ascii_case("[fill reason here]") {
        String::new()
    } else {
        t.to_string()
    }
}

/// Reads `Label: X` / `Reason: Y` from an answer. `None` when no line carries a
/// recognizable label (an echoed `[Fill label here]` does not count).
pub fn parse_verdict(text: &str) -> Option<(LlmLabel, String)> {
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let Some(cap) = label_line_re().captures(line) else { continue };
        let rest = &cap[1];
        let (value, inline_reason) = match reason_re().captures(rest) {
            Some(r) => (&rest[..r.get(0).expect("match").start()], Some(clean_reason(&r[1]))),
            None => (rest, None),
        };
        let Some(label) = label_value(value) else { continue };
        let reason = inline_reason.unwrap_or_else(|| {
            lines[i + 1..]
                .iter()
                .take_while(|l| !label_line_re().is_match(l))
                .find_map(|l| reason_re().captures(l).map(|c| clean_reason(&c[1])))
                .unwrap_or_default()
        });
        return Some((label, reason));
    }
    None
}

pub fn qc_tag(case_id: &str) -> String {
    format!("qc/{case_id}")
}

pub struct Labeler<'a> {
    pub gateway: &'a Gateway,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl<'a> Labeler<'a> {
    pub fn new(gateway: &'a Gateway, model: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            gateway,
            model: model.into(),
            temperature,
            max_tokens,
        }
    }

    fn ask(&self, prompt: &str, tag: String) -> Result<String> {
        self.gateway.chat(&ChatRequest {
            prompt: prompt.to_string(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            tag,
        })
    }

    /// One retry on an unparseable answer, then `hard` with reason "parse failure".
    pub fn auto_label(&self, case: &MftCase) -> Result<QcVerdict> {
        let prompt = LABEL.render(&[("input_text", &case.text)])?;
        let tag = qc_tag(&case.id);
        let mut parsed = parse_verdict(&self.ask(&prompt, tag.clone())?);
        if parsed.is_none() {
            log::warn!("{tag}: no label in answer, retrying");
            parsed = parse_verdict(&self.ask(&prompt, format!("{tag}/retry1"))?);
        }
        Ok(match parsed {
            Some((label, reason)) => QcVerdict::new(case, label, reason),
            None => QcVerdict::new(case, LlmLabel::Hard, "parse failure"),
        })
    }

    pub fn auto_label_many(&self, cases: &[MftCase]) -> Result<Vec<QcVerdict>> {
        self.gateway.map_bounded(cases, |c| self.auto_label(c)).into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageAction {
    Keep,
    RelabelPositive,
    RelabelNegative,
    Remove,
}

impl TriageAction {
    pub fn name(self) -> &'static str {
        match self {
            TriageAction::Keep => "keep",
            TriageAction::RelabelPositive => "relabel_positive",
            TriageAction::RelabelNegative => "relabel_negative",
            TriageAction::Remove => "remove",
        }
    }

    pub fn relabel_to(label: Label) -> Self {
        match label {
            Label::Positive => TriageAction::RelabelPositive,
            Label::Negative => TriageAction::RelabelNegative,
        }
    }
}

impl FromStr for TriageAction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "keep" => Ok(TriageAction::Keep),
            "relabel_positive" => Ok(TriageAction::RelabelPositive),
            "relabel_negative" => Ok(TriageAction::RelabelNegative),
            "remove" => Ok(TriageAction::Remove),
            other => Err(Error::Parse(format!("unknown triage action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriageRecord {
    pub case_id: String,
    pub text: String,
    pub inherited_label: Label,
    pub llm_label: LlmLabel,
    pub reason: String,
    pub proposed_action: TriageAction,
    /// `None` while pending.
    pub human_decision: Option<TriageAction>,
}

#[derive(Serialize, Deserialize)]
struct TriageRow {
    case_id: String,
    text: String,
    inherited_label: String,
    llm_label: String,
    reason: String,
    proposed_action: String,
    human_decision: String,
}

pub const TRIAGE_COLUMNS: [&str; 7] = [
    "case_id",
    "text",
    "inherited_label",
    "llm_label",
    "reason",
    "proposed_action",
    "human_decision",
];

/// Triage rows for flagged cases, in suite order.
pub fn triage_records(cases: &[MftCase], verdicts: &[QcVerdict]) -> Result<Vec<TriageRecord>> {
    let by_id: HashMap<&str, &QcVerdict> = verdicts.iter().map(|v| (v.case_id.as_str(), v)).collect();
    let mut out = Vec::new();
    for case in cases {
        let v = by_id
            .get(case.id.as_str())
            .ok_or_else(|| Error::Precondition(format!("no verdict for case {}", case.id)))?;
        // Recomputed so a stale flag in a stored verdict cannot leak through.
        let v = QcVerdict::new(case, v.llm_label, v.reason.clone());
        if !v.flagged() {
            continue;
        }
        let proposed = match v.llm_label.as_label() {
            Some(l) => TriageAction::relabel_to(l),
            None => TriageAction::Remove,
        };
        out.push(TriageRecord {
            case_id: case.id.clone(),
            text: case.text.clone(),
            inherited_label: case.inherited_label,
            llm_label: v.llm_label,
            reason: v.reason,
            proposed_action: proposed,
            human_decision: None,
        });
    }
    Ok(out)
}

pub fn triage_to_csv(records: &[TriageRecord]) -> Result<Vec<u8>> {
    // Header written by hand so an empty triage file still has one.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TRIAGE_COLUMNS)?;
    for r in records {
        w.serialize(TriageRow {
            case_id: r.case_id.clone(),
            text: r.text.clone(),
            inherited_label: r.inherited_label.name().into(),
            llm_label: r.llm_label.name().into(),
            reason: r.reason.clone(),
            proposed_action: r.proposed_action.name().into(),
            human_decision: r.human_decision.map_or("pending", TriageAction::name).into(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn triage_export(cases: &[MftCase], verdicts: &[QcVerdict], path: &Path) -> Result<Vec<TriageRecord>> {
    let records = triage_records(cases, verdicts)?;
    crate::io::write_atomic(path, &triage_to_csv(&records)?)?;
    Ok(records)
}

pub fn parse_triage(reader: impl std::io::Read) -> Result<Vec<TriageRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in TRIAGE_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.into()));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<TriageRow>() {
        let row = row?;
        let decision = row.human_decision.trim();
        out.push(TriageRecord {
            inherited_label: row.inherited_label.parse()?,
            llm_label: row.llm_label.parse()?,
            proposed_action: row.proposed_action.parse()?,
            human_decision: if decision.is_empty() || decision.eq_ignore_ascii_case("pending") {
                None
            } else {
                Some(decision.parse()?)
            },
            case_id: row.case_id,
            text: row.text,
            reason: row.reason,
        });
    }
    Ok(out)
}

pub fn read_triage(path: &Path) -> Result<Vec<TriageRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triage(file)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyOptions {
    /// Use the proposed action for rows still pending instead of failing.
    pub accept_proposed: bool,
}

/// Applies triage decisions to a suite, returning a new one.
///
/// Removals and relabels cascade to paraphrases of the affected case. Every
/// surviving case ends with a decided `qc_label`. A removal whose case is
/// already absent is a no-op, which makes reapplying the same file harmless.
pub fn apply_triage(suite: &MftSuite, records: &[TriageRecord], options: ApplyOptions) -> Result<MftSuite> {
    let present: HashSet<&str> = suite.cases.iter().map(|c| c.id.as_str()).collect();
    let mut actions: HashMap<&str, TriageAction> = HashMap::new();
    for r in records {
        let action = match (r.human_decision, options.accept_proposed) {
            (Some(a), _) => a,
            (None, true) => r.proposed_action,
            (None, false) => {
                return Err(Error::Precondition(format!("triage decision for {} is pending", r.case_id)))
            }
        };
        if !present.contains(r.case_id.as_str()) {
            if action == TriageAction::Remove {
                continue;
            }
            return Err(Error::UnknownId(r.case_id.clone()));
        }
        if actions.insert(r.case_id.as_str(), action).is_some() {
            return Err(Error::DuplicateId(r.case_id.clone()));
        }
    }

    let mut cases = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        let key = case.paraphrase_of.as_deref().filter(|p| actions.contains_key(p)).unwrap_or(&case.id);
        let mut c = case.clone();
        match actions.get(key) {
            Some(TriageAction::Remove) => continue,
            Some(TriageAction::RelabelPositive) => c.inherited_label = Label::Positive,
            Some(TriageAction::RelabelNegative) => c.inherited_label = Label::Negative,
            Some(TriageAction::Keep) | None => {}
        }
        c.qc_label = QcLabel::from(c.inherited_label);
        cases.push(c);
    }
    Ok(MftSuite::new(suite.name.clone(), cases, suite.provenance.clone()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcSummary {
    pub total: usize,
    pub agree: usize,
    pub disagree: usize,
    pub hard: usize,
}

pub fn summarize(verdicts: &[QcVerdict]) -> QcSummary {
    let mut s = QcSummary {
        total: verdicts.len(),
        ..Default::default()
    };
    for v in verdicts {
        if v.llm_label == LlmLabel::Hard {
            s.hard += 1;
        } else if v.agrees_with_inherited {
            s.agree += 1;
        } else {
            s.disagree += 1;
        }
    }
    s
}
