use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::{parse_mft_block, parse_numbered_list, render_mft_block, ParsedBlock};
use super::template::{EXAMPLE_BLOCK, FEWSHOT, GENERATE, PARAPHRASE};
use super::{dedup, FewShotExample, MftCase, MftSuite, Provenance, QcLabel};
use crate::corpus::{Document, Label, LabeledCorpus, Split};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway};
use crate::topics::RepresentativeSet;

/// Answers with more cases than this are truncated.
pub const MAX_CASES_PER_DOC: usize = 6;

/// Share of documents allowed to fail before a whole run is rejected.
const MAX_FAILURE_RATE: f64 = 0.2;

fn polarity_slug(l: Label) -> &'static str {
    match l {
        Label::Positive => "pos",
        Label::Negative => "neg",
    }
}

pub fn fewshot_tag(split: Split, seed: u64, polarity: Label) -> String {
    format!("fewshot/{split}/s{seed}/{}", polarity_slug(polarity))
}

pub fn generation_tag(split: Split, seed: u64, doc_id: &str) -> String {
    format!("gen/{split}/s{seed}/{doc_id}")
}

pub fn paraphrase_tag(case_id: &str) -> String {
    format!("para/{case_id}")
}

/// The Q/A block shown to the model as a worked example.
pub fn render_example_block(doc_text: &str, pairs: &[super::CasePair]) -> Result<String> {
    EXAMPLE_BLOCK.render(&[("input_text", doc_text), ("cases", &render_mft_block(pairs))])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLogRow {
    pub split: Split,
    pub seed: u64,
    pub doc_id: String,
    pub cluster: usize,
    pub attempts: u32,
    pub cases_produced: usize,
    pub parse_failed: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub rows: Vec<GenerationLogRow>,
}

impl GenerationLog {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.parse_failed).count()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

pub struct GenerationOutput {
    pub suites: Vec<MftSuite>,
    pub fewshots: Vec<(u64, FewShotExample)>,
    pub log: GenerationLog,
}

/// Prompts the chat model through a gateway.
pub struct Generator<'a> {
    pub gateway: &'a Gateway,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl<'a> Generator<'a> {
    pub fn new(gateway: &'a Gateway, model: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            gateway,
            model: model.into(),
            temperature,
            max_tokens,
        }
    }

    pub fn request(&self, prompt: String, tag: String) -> ChatRequest {
        ChatRequest {
            prompt,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            tag,
        }
    }

    /// One call, plus one retry under `{tag}/retry1` if nothing parses.
    fn ask_block(&self, prompt: &str, tag: &str) -> Result<(ParsedBlock, u32)> {
        let first = parse_mft_block(&self.gateway.chat(&self.request(prompt.to_string(), tag.to_string()))?);
        if !first.failed {
            return Ok((first, 1));
        }
        log::warn!("{tag}: no test cases in answer, retrying");
        let retry = self.request(prompt.to_string(), format!("{tag}/retry1"));
        Ok((parse_mft_block(&self.gateway.chat(&retry)?), 2))
    }

    pub fn build_fewshot(&self, polarity: Label, doc: &Document, tag: &str) -> Result<FewShotExample> {
        if doc.label != polarity {
            return Err(Error::Precondition(format!(
                "few-shot source {} is {} but the example must be {polarity}",
                doc.id, doc.label
            )));
        }
        let prompt = FEWSHOT.render(&[("pos_ex_input_text", &doc.text)])?;
        let (parsed, _) = self.ask_block(&prompt, tag)?;
        if parsed.failed {
            return Err(Error::Parse(format!("{tag}: few-shot answer has no test cases")));
        }
        Ok(FewShotExample {
            polarity,
            source_doc_id: doc.id.clone(),
            rendered_example: render_example_block(&doc.text, &parsed.pairs)?,
            prompt_used: prompt,
            parsed_cases: parsed.pairs,
        })
    }

    /// Cases for one representative document. Each inherits the document's label.
    pub fn generate_cases(
        &self,
        doc: &Document,
        cluster: usize,
        seed: u64,
        fewshot: &FewShotExample,
        tag: &str,
    ) -> Result<(Vec<MftCase>, GenerationLogRow)> {
        if fewshot.polarity != doc.label {
            return Err(Error::Precondition(format!(
                "document {} is {} but the few-shot example is {}",
                doc.id, doc.label, fewshot.polarity
            )));
        }
        let prompt = GENERATE.render(&[("prompt_example", &fewshot.rendered_example), ("input_text", &doc.text)])?;
        let (parsed, attempts) = self.ask_block(&prompt, tag)?;
        let mut row = GenerationLogRow {
            split: doc.split.unwrap_or(Split::Train),
            seed,
            doc_id: doc.id.clone(),
            cluster,
            attempts,
            cases_produced: 0,
            parse_failed: parsed.failed,
            truncated: parsed.pairs.len() > MAX_CASES_PER_DOC,
        };
        if row.truncated {
            log::warn!("{tag}: {} cases returned, keeping {MAX_CASES_PER_DOC}", parsed.pairs.len());
        }
        let cases: Vec<MftCase> = parsed
            .pairs
            .into_iter()
            .take(MAX_CASES_PER_DOC)
            .enumerate()
            .map(|(i, p)| MftCase {
                id: format!("s{seed}-{}-{}", doc.id, i + 1),
                text: p.review,
                summary: p.summary,
                inherited_label: doc.label,
                qc_label: QcLabel::Unreviewed,
                source_doc_id: doc.id.clone(),
                cluster,
                seed,
                paraphrase_of: None,
                mft_topic: None,
            })
            .collect();
        row.cases_produced = cases.len();
        Ok((cases, row))
    }

    /// Up to `n` rephrasings of `case`, labelled like their parent.
    pub fn paraphrase(&self, case: &MftCase, n: usize) -> Result<Vec<MftCase>> {
        if case.is_paraphrase() {
            return Err(Error::Precondition(format!("{} is already a paraphrase", case.id)));
        }
        let prompt = PARAPHRASE.render(&[("n", &n.to_string()), ("input_text", &case.text)])?;
        let answer = self.gateway.chat(&self.request(prompt, paraphrase_tag(&case.id)))?;
        let items = parse_numbered_list(&answer);
        if items.len() < n {
            log::warn!("{}: {} of {n} paraphrases parsed", case.id, items.len());
        }
        Ok(items
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(j, text)| MftCase {
                id: format!("{}-p{}", case.id, j + 1),
                text,
                paraphrase_of: Some(case.id.clone()),
                mft_topic: None,
                ..case.clone()
            })
            .collect())
    }

    /// Paraphrases of every case, in input order.
    pub fn paraphrase_many(&self, cases: &[MftCase], n: usize) -> Result<Vec<MftCase>> {
        let results = self.gateway.map_bounded(cases, |c| self.paraphrase(c, n));
        let mut out = Vec::new();
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Seeded choice of the document a few-shot example is built from.
/// Documents in `exclude` are avoided when any alternative exists.
pub fn select_fewshot_source<'c>(
    corpus: &'c LabeledCorpus,
    polarity: Label,
    seed: u64,
    exclude: &HashSet<&str>,
) -> Result<&'c Document> {
    let all: Vec<&Document> = corpus.documents.iter().filter(|d| d.label == polarity).collect();
    let preferred: Vec<&Document> = all.iter().copied().filter(|d| !exclude.contains(d.id.as_str())).collect();
    let pool = if preferred.is_empty() { &all } else { &preferred };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(polarity.as_u8() as u64));
    pool.choose(&mut rng)
        .copied()
        .ok_or_else(|| Error::Precondition(format!("no {polarity} document to build a few-shot example from")))
}

/// One suite per seed, named `MFT 1`, `MFT 2`, ... in the order given.
///
/// `corpus` is the split the representatives were drawn from. Cases are
/// ordered by cluster, representative rank and case index, then deduplicated.
pub fn run_generation(
    generator: &Generator,
    split: Split,
    corpus: &LabeledCorpus,
    representatives: &[(u64, Vec<RepresentativeSet>)],
    config_hash: &str,
) -> Result<GenerationOutput> {
    let mut suites = Vec::new();
    let mut fewshots = Vec::new();
    let mut log = GenerationLog::default();

    for (i, (seed, sets)) in representatives.iter().enumerate() {
        let seed = *seed;
        let mut sets: Vec<&RepresentativeSet> = sets.iter().collect();
        sets.sort_by_key(|s| s.cluster);
        let mut targets: Vec<(usize, &Document)> = Vec::new();
        for set in &sets {
            for pick in &set.picks {
                let doc = corpus.get(&pick.doc_id).ok_or_else(|| Error::UnknownId(pick.doc_id.clone()))?;
                targets.push((set.cluster, doc));
            }
        }
        let exclude: HashSet<&str> = targets.iter().map(|(_, d)| d.id.as_str()).collect();

        let mut examples: BTreeMap<Label, FewShotExample> = BTreeMap::new();
        for polarity in Label::ALL {
            if !targets.iter().any(|(_, d)| d.label == polarity) {
                continue;
            }
            let source = select_fewshot_source(corpus, polarity, seed, &exclude)?;
            let example = generator.build_fewshot(polarity, source, &fewshot_tag(split, seed, polarity))?;
            fewshots.push((seed, example.clone()));
            examples.insert(polarity, example);
        }

        let results = generator.gateway.map_bounded(&targets, |(cluster, doc)| {
            generator.generate_cases(doc, *cluster, seed, &examples[&doc.label], &generation_tag(split, seed, &doc.id))
        });

        let mut cases = Vec::new();
        for r in results {
            let (c, row) = r?;
            cases.extend(c);
            log.rows.push(row);
        }
        let failed = log.rows.iter().filter(|r| r.seed == seed && r.parse_failed).count();
        if !targets.is_empty() && failed as f64 > MAX_FAILURE_RATE * targets.len() as f64 {
            return Err(Error::Parse(format!(
                "seed {seed}: {failed} of {} documents produced no parseable cases",
                targets.len()
            )));
        }
        if failed > 0 {
            log::warn!("seed {seed}: skipped {failed} documents with unparseable answers");
        }
        suites.push(MftSuite::new(
            format!("MFT {}", i + 1),
            dedup(&cases),
            Provenance {
                split: Some(split),
                seeds: vec![seed],
                config_hash: config_hash.to_string(),
            },
        ));
    }
    Ok(GenerationOutput { suites, fewshots, log })
}
