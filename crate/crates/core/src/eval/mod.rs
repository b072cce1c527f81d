//! Scoring classifier predictions on suite variants and topics.

mod render;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::Path;
use std::time::Duration;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{Label, Split};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};
use crate::mft_gen::MftSuite;
use crate::suite::{MftTopicModel, SuiteVariantSet};

pub use render::{render, scatter_svg, PlotInput, RenderedFiles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    pub predicted_label: Label,
    pub score: Option<f64>,
}

/// `case_id,predicted_label[,score]`.
pub fn parse_predictions(reader: impl Read) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("case_id").ok_or_else(|| Error::MissingColumn("case_id".into()))?;
    let label_col = col("predicted_label").ok_or_else(|| Error::MissingColumn("predicted_label".into()))?;
    let score_col = col("score");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let score = match score_col.map(field) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("predictions row {}: bad score `{s}`", i + 1)))?,
            ),
        };
        out.push(PredictionRecord {
            case_id: field(id_col).to_string(),
            predicted_label: field(label_col).parse()?,
            score,
        });
    }
    Ok(out)
}

pub fn predictions_to_csv(records: &[PredictionRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case_id", "predicted_label", "score"])?;
    for r in records {
        w.write_record([
            r.case_id.clone(),
            r.predicted_label.as_u8().to_string(),
            r.score.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

/// Checks predictions against the cases they should cover.
///
/// Unknown or repeated ids are errors. Missing ids are an error listing them,
/// or a warning with `allow_partial`.
pub fn check_coverage<'s>(
    records: Vec<PredictionRecord>,
    case_ids: impl IntoIterator<Item = &'s str>,
    allow_partial: bool,
) -> Result<Vec<PredictionRecord>> {
    let ids: Vec<&str> = case_ids.into_iter().collect();
    let known: HashSet<&str> = ids.iter().copied().collect();
    let mut seen = HashSet::new();
    for r in &records {
        if !known.contains(r.case_id.as_str()) {
            return Err(Error::UnknownId(r.case_id.clone()));
        }
        if !seen.insert(r.case_id.as_str()) {
            return Err(Error::DuplicateId(r.case_id.clone()));
        }
    }
    let missing: Vec<&str> = ids.iter().copied().filter(|id| !seen.contains(id)).collect();
    if !missing.is_empty() {
        let msg = format!("no prediction for {} case(s): {}", missing.len(), missing.join(", "));
        if !allow_partial {
            return Err(Error::Precondition(msg));
        }
        log::warn!("{msg}");
    }
    Ok(records)
}

pub fn ingest_predictions_file(path: &Path, suite: &MftSuite, allow_partial: bool) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    check_coverage(parse_predictions(file)?, suite.cases.iter().map(|c| c.id.as_str()), allow_partial)
}

/// Client for `POST {url}` with `{"texts": [...]}` answering `{"labels": [...]}`.
pub struct HttpPredictor {
    url: String,
    batch_size: usize,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpPredictor {
    pub fn new(url: impl Into<String>, batch_size: usize, timeout: Duration, retry: RetryPolicy) -> Result<Self> {
        Ok(Self {
            url: url.into(),
            batch_size: batch_size.max(1),
            client: http::build_client(timeout)?,
            retry,
        })
    }

    /// Labels aligned with `texts` by position.
    pub fn predict(&self, texts: &[String]) -> Result<Vec<Label>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp = http::post_json(&self.client, &self.url, None, &[], &json!({ "texts": chunk }), &self.retry)?;
            let labels = parse_predict_response(&resp.body, chunk.len())?;
            out.extend(labels);
        }
        Ok(out)
    }
}

/// Labels may be `0`/`1` numbers or label names.
pub fn parse_predict_response(body: &Value, expected: usize) -> Result<Vec<Label>> {
    let labels = body
        .get("labels")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("predict response has no `labels` array".into()))?;
    if labels.len() != expected {
        return Err(Error::Parse(format!("predict response has {} labels for {expected} texts", labels.len())));
    }
    labels
        .iter()
        .map(|v| match v {
            Value::Number(n) => n
                .as_u64()
                .and_then(|n| u8::try_from(n).ok())
                .and_then(|n| Label::try_from(n).ok())
                .ok_or_else(|| Error::Parse(format!("bad label {v}"))),
            Value::String(s) => s.parse(),
            other => Err(Error::Parse(format!("bad label {other}"))),
        })
        .collect()
}

pub fn ingest_predictions_http(predictor: &HttpPredictor, suite: &MftSuite) -> Result<Vec<PredictionRecord>> {
    let texts: Vec<String> = suite.cases.iter().map(|c| c.text.clone()).collect();
    let labels = predictor.predict(&texts)?;
    Ok(suite
        .cases
        .iter()
        .zip(labels)
        .map(|(c, l)| PredictionRecord {
            case_id: c.id.clone(),
            predicted_label: l,
            score: None,
        })
        .collect())
}

/// An exact `correct / total` count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: u64,
    pub total: u64,
}

impl Accuracy {
    pub fn new(correct: u64, total: u64) -> Result<Self> {
        if total == 0 || correct > total {
            return Err(Error::Invalid(format!("accuracy {correct}/{total} is undefined")));
        }
        Ok(Self { correct, total })
    }

    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.correct, self.total)
    }

    pub fn fraction(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.fraction()
    }

    /// Percent with two decimals, rounded half up, e.g. `75.00%`.
    pub fn render(&self) -> String {
        let (c, t) = (self.correct as u128, self.total as u128);
        let hundredths = (c * 20_000 + t) / (2 * t);
        format!("{}.{:02}%", hundredths / 100, hundredths % 100)
    }
}

/// Accuracy of `predictions` on every case of `suite`.
pub fn score_suite(suite: &MftSuite, predictions: &HashMap<String, Label>) -> Result<Accuracy> {
    if suite.is_empty() {
        return Err(Error::NothingToRender);
    }
    let mut correct = 0;
    for c in &suite.cases {
        let p = predictions
            .get(&c.id)
            .ok_or_else(|| Error::Precondition(format!("no prediction for case {}", c.id)))?;
        if *p == c.expected_label() {
            correct += 1;
        }
    }
    Accuracy::new(correct, suite.len() as u64)
}

/// `overall` must equal the case-weighted mean of `parts`, as exact rationals.
pub fn check_weighted_mean(overall: Accuracy, parts: &[Accuracy]) -> Result<()> {
    let n: u64 = parts.iter().map(|a| a.total).sum();
    if n != overall.total {
        return Err(Error::Invariant(format!("topic totals sum to {n}, suite has {}", overall.total)));
    }
    let weighted = parts
        .iter()
        .fold(Ratio::from_integer(0u64), |acc, a| acc + Ratio::new(a.total, n) * a.ratio());
    if weighted != overall.ratio() {
        return Err(Error::Invariant(format!(
            "weighted topic accuracy {weighted} differs from overall {}",
            overall.ratio()
        )));
    }
    Ok(())
}

/// Sample standard deviation (n - 1 denominator), by Welford's recurrence.
/// A constant series gives exactly zero.
pub fn stability(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Precondition(format!("stability needs at least 2 values, got {}", values.len())));
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((m2 / (values.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub split: Split,
    pub dataset: String,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub topic: usize,
    pub topic_name: String,
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    /// Accuracy on the raw corpus splits, when supplied.
    pub raw_splits: BTreeMap<Split, Accuracy>,
    /// Every variant, in variant-set order.
    pub variants: Vec<VariantScore>,
    /// Per-seed accuracies (percent) by split.
    pub per_seed: BTreeMap<Split, Vec<f64>>,
    /// Sample standard deviation of `per_seed`, when at least two seeds exist.
    pub stability: BTreeMap<Split, f64>,
    /// Scored suite name and its per-topic accuracies.
    pub topic_suite: Option<String>,
    pub topics: Vec<TopicScore>,
}

/// Scores one model on every variant and, optionally, on the topics of one suite.
pub fn score(
    model_name: &str,
    sets: &[SuiteVariantSet],
    predictions: &HashMap<String, Label>,
    topics: Option<(&MftSuite, &MftTopicModel)>,
    raw_splits: BTreeMap<Split, Accuracy>,
) -> Result<EvalReport> {
    let mut variants = Vec::new();
    let mut per_seed = BTreeMap::new();
    let mut stab = BTreeMap::new();
    for set in sets {
        let seeds: Vec<f64> = set
            .seed_suites
            .iter()
            .map(|s| score_suite(s, predictions).map(|a| a.percent()))
            .collect::<Result<_>>()?;
        for s in set.variants() {
            variants.push(VariantScore {
                split: set.split,
                dataset: s.name.clone(),
                accuracy: score_suite(s, predictions)?,
            });
        }
        if seeds.len() >= 2 {
            stab.insert(set.split, stability(&seeds)?);
        }
        per_seed.insert(set.split, seeds);
    }

    let mut topic_scores = Vec::new();
    let mut topic_suite = None;
    if let Some((suite, model)) = topics {
        let overall = score_suite(suite, predictions)?;
        let mut counts = vec![(0u64, 0u64); model.topic_names.len()];
        for c in &suite.cases {
            let t = *model
                .assignments
                .get(&c.id)
                .ok_or_else(|| Error::Invariant(format!("case {} has no topic", c.id)))?;
            let slot = counts
                .get_mut(t)
                .ok_or_else(|| Error::Invariant(format!("topic {t} has no name")))?;
            slot.1 += 1;
            if predictions[&c.id] == c.expected_label() {
                slot.0 += 1;
            }
        }
        for (t, &(correct, total)) in counts.iter().enumerate() {
            if total > 0 {
                topic_scores.push(TopicScore {
                    topic: t,
                    topic_name: model.topic_names[t].clone(),
                    accuracy: Accuracy::new(correct, total)?,
                });
            }
        }
        let parts: Vec<Accuracy> = topic_scores.iter().map(|t| t.accuracy).collect();
        check_weighted_mean(overall, &parts)?;
        topic_suite = Some(suite.name.clone());
    }

    Ok(EvalReport {
        model_name: model_name.to_string(),
        raw_splits,
        variants,
        per_seed,
        stability: stab,
        topic_suite,
        topics: topic_scores,
    })
}

pub fn prediction_map(records: &[PredictionRecord]) -> HashMap<String, Label> {
    records.iter().map(|r| (r.case_id.clone(), r.predicted_label)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_rounds_half_up() {
        assert_eq!(Accuracy::new(3, 4).unwrap().render(), "75.00%");
        assert_eq!(Accuracy::new(1, 3).unwrap().render(), "33.33%");
        assert_eq!(Accuracy::new(2, 3).unwrap().render(), "66.67%");
        // 1/8 = 12.5% exactly; 1/1600 = 0.0625% rounds up to 0.06%.
        assert_eq!(Accuracy::new(1, 8).unwrap().render(), "12.50%");
        assert_eq!(Accuracy::new(1, 1600).unwrap().render(), "0.06%");
        // 1/800 = 0.125%, the half case, rounds up.
        assert_eq!(Accuracy::new(1, 800).unwrap().render(), "0.13%");
        assert_eq!(Accuracy::new(7, 7).unwrap().render(), "100.00%");
    }

    #[test]
    fn stability_cases() {
        assert_eq!(stability(&[90.0, 90.0, 90.0]).unwrap(), 0.0);
        assert!((stability(&[82.20, 89.74, 92.70]).unwrap() - 5.41).abs() < 0.01);
        assert!(stability(&[1.0]).is_err());
    }

    #[test]
    fn weighted_mean() {
        let overall = Accuracy::new(3, 4).unwrap();
        check_weighted_mean(overall, &[Accuracy::new(2, 2).unwrap(), Accuracy::new(1, 2).unwrap()]).unwrap();
        assert!(check_weighted_mean(overall, &[Accuracy::new(2, 2).unwrap(), Accuracy::new(2, 2).unwrap()]).is_err());
    }

    #[test]
    fn predictions_csv() {
        let recs = parse_predictions("case_id,predicted_label\na,1\nb,0\n".as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        let err = check_coverage(recs.clone(), ["a", "b", "c"], false).unwrap_err();
        assert!(err.to_string().contains("c"));
        assert_eq!(check_coverage(recs, ["a", "b", "c"], true).unwrap().len(), 2);
    }

    #[test]
    fn predict_response_positional() {
        let labels = parse_predict_response(&json!({"labels": [1, "negative", 0]}), 3).unwrap();
        assert_eq!(labels, vec![Label::Positive, Label::Negative, Label::Negative]);
        assert!(parse_predict_response(&json!({"labels": [1]}), 2).is_err());
    }
}
