//! Suite variants (per seed, Original, Extended) and second-layer topics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::geometry::{kmeans, reduce, KMeansParams, ReductionMethod};
use crate::mft_gen::{dedup, MftCase, MftSuite, Provenance};
use crate::topics::{class_term_stats_for, ctfidf, raw_keywords, topic_name, TokenizerConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRow {
    pub dataset: String,
    pub data_size: usize,
    /// Size before QC removals; absent for Extended, which is built after QC.
    pub pre_qc_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteVariantSet {
    pub split: Split,
    pub seed_suites: Vec<MftSuite>,
    pub original: MftSuite,
    pub extended: MftSuite,
    pub sizes: Vec<SizeRow>,
}

impl SuiteVariantSet {
    /// Seed suites, then Original, then Extended.
    pub fn variants(&self) -> Vec<&MftSuite> {
        self.seed_suites.iter().chain([&self.original, &self.extended]).collect()
    }
}

/// `Train MFT 1`, `Test MFT (Original)`, ...
pub fn variant_name(split: Split, variant: &str) -> String {
    format!("{} {variant}", split.title())
}

fn union(suites: &[MftSuite]) -> Vec<MftCase> {
    suites.iter().flat_map(|s| s.cases.iter().cloned()).collect()
}

/// Builds Original and Extended from post-QC seed suites.
///
/// `pre_qc` are the same seed suites before QC, used only for the size table.
pub fn assemble_variants(
    seed_suites: &[MftSuite],
    paraphrases: &[MftCase],
    split: Split,
    paraphrase_n: usize,
    pre_qc: Option<&[MftSuite]>,
) -> Result<SuiteVariantSet> {
    if seed_suites.is_empty() {
        return Err(Error::Precondition("at least one seed suite is needed".into()));
    }
    if let Some(pre) = pre_qc {
        if pre.len() != seed_suites.len() {
            return Err(Error::Invalid(format!(
                "{} pre-QC suites for {} seed suites",
                pre.len(),
                seed_suites.len()
            )));
        }
    }
    let provenance = |seeds: Vec<u64>| Provenance {
        split: Some(split),
        seeds,
        config_hash: seed_suites[0].provenance.config_hash.clone(),
    };
    let all_seeds: Vec<u64> = seed_suites.iter().flat_map(|s| s.provenance.seeds.clone()).collect();

    let original = MftSuite::new(variant_name(split, "MFT (Original)"), dedup(&union(seed_suites)), provenance(all_seeds.clone()));

    let original_ids: HashSet<&str> = original.cases.iter().map(|c| c.id.as_str()).collect();
    let mut fan_out: HashMap<&str, usize> = HashMap::new();
    for p in paraphrases {
        let parent = p
            .paraphrase_of
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("{} is not a paraphrase", p.id)))?;
        if !original_ids.contains(parent) {
            return Err(Error::Invariant(format!(
                "paraphrase {} references {parent}, which is not in the original suite",
                p.id
            )));
        }
        *fan_out.entry(parent).or_default() += 1;
    }
    if let Some((parent, n)) = fan_out.iter().find(|(_, &n)| n > paraphrase_n) {
        return Err(Error::Invariant(format!("{parent} has {n} paraphrases, limit {paraphrase_n}")));
    }

    let mut pool = original.cases.clone();
    pool.extend(paraphrases.iter().cloned());
    let extended = MftSuite::new(variant_name(split, "MFT (Extended)"), dedup(&pool), provenance(all_seeds));

    let seed_suites: Vec<MftSuite> = seed_suites
        .iter()
        .map(|s| MftSuite {
            name: variant_name(split, &s.name),
            ..s.clone()
        })
        .collect();

    let mut sizes: Vec<SizeRow> = seed_suites
        .iter()
        .enumerate()
        .map(|(i, s)| SizeRow {
            dataset: s.name.clone(),
            data_size: s.len(),
            pre_qc_size: pre_qc.map(|p| p[i].len()),
        })
        .collect();
    sizes.push(SizeRow {
        dataset: original.name.clone(),
        data_size: original.len(),
        pre_qc_size: pre_qc.map(|p| dedup(&union(p)).len()),
    });
    sizes.push(SizeRow {
        dataset: extended.name.clone(),
        data_size: extended.len(),
        pre_qc_size: None,
    });

    let set = SuiteVariantSet {
        split,
        seed_suites,
        original,
        extended,
        sizes,
    };
    check_variants(&set, paraphrase_n)?;
    Ok(set)
}

/// The variant-set invariants, asserted directly.
pub fn check_variants(set: &SuiteVariantSet, paraphrase_n: usize) -> Result<()> {
    for s in set.variants() {
        s.check()?;
    }
    if dedup(&set.original.cases) != set.original.cases {
        return Err(Error::Invariant("original suite is not deduplicated".into()));
    }
    if set.extended.len() > (1 + paraphrase_n) * set.original.len() {
        return Err(Error::Invariant(format!(
            "extended suite has {} cases, more than {} x {}",
            set.extended.len(),
            1 + paraphrase_n,
            set.original.len()
        )));
    }
    Ok(())
}

pub fn sizes_to_csv(rows: &[SizeRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "data_size", "pre_qc_size"])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.data_size.to_string(),
            r.pre_qc_size.map(|n| n.to_string()).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MftTopicModel {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub topic_names: Vec<String>,
}

impl MftTopicModel {
    /// Copies topic indices onto the suite's cases.
    pub fn apply(&self, suite: &MftSuite) -> Result<MftSuite> {
        let mut out = suite.clone();
        for c in &mut out.cases {
            c.mft_topic = Some(
                *self
                    .assignments
                    .get(&c.id)
                    .ok_or_else(|| Error::Invariant(format!("case {} has no topic", c.id)))?,
            );
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["case_id", "topic", "topic_name"])?;
        for (id, &t) in &self.assignments {
            w.write_record([id.as_str(), &t.to_string(), &self.topic_names[t]])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicParams {
    pub k: usize,
    pub seed: u64,
    pub reduce_dims: usize,
    pub method: ReductionMethod,
}

/// Clusters case embeddings and names each cluster from its case texts.
pub fn cluster_mft_topics(
    suite: &MftSuite,
    embeddings: &EmbeddingMatrix,
    params: &TopicParams,
    tokenizer: &TokenizerConfig,
) -> Result<MftTopicModel> {
    let k = params.k;
    if k == 0 || k > suite.len() {
        return Err(Error::Invalid(format!("k = {k} must be between 1 and the suite size {}", suite.len())));
    }
    let ids: Vec<String> = suite.cases.iter().map(|c| c.id.clone()).collect();
    let m = embeddings.select(&ids)?;
    let labels: Vec<usize> = if k == 1 {
        vec![0; ids.len()]
    } else {
        let dims = params.reduce_dims.min(m.dim()).max(1);
        let reduced = reduce(&m, dims, params.method, params.seed, None)?;
        let model = kmeans(&reduced, &KMeansParams::new(k, params.seed))?;
        model.labels
    };

    let stats = class_term_stats_for(
        suite.cases.iter().zip(&labels).map(|(c, &l)| (c.text.as_str(), l)),
        k,
        tokenizer,
    )?;
    let topic_names = ctfidf(&stats)
        .iter()
        .map(|sig| topic_name(sig.cluster, &raw_keywords(sig, 4)))
        .collect();
    Ok(MftTopicModel {
        k,
        assignments: ids.into_iter().zip(labels).collect(),
        topic_names,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingRule {
    pub keyword: String,
    pub group: String,
}

pub const OTHER_GROUP: &str = "other";

/// `keyword,group` rows; a `keyword,group` header line is optional.
pub fn parse_rules(reader: impl Read) -> Result<Vec<GroupingRule>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rules = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("rules row {}: expected keyword,group", i + 1)));
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("keyword") && rec[1].eq_ignore_ascii_case("group") {
            continue;
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::Parse(format!("rules row {}: empty keyword or group", i + 1)));
        }
        rules.push(GroupingRule {
            keyword: rec[0].to_string(),
            group: rec[1].to_string(),
        });
    }
    Ok(rules)
}

/// First rule whose keyword occurs in the text (case-insensitive) wins;
/// unmatched cases go to `other`, which is always the last topic.
pub fn manual_grouping(suite: &MftSuite, rules: &[GroupingRule]) -> Result<MftTopicModel> {
    if rules.is_empty() {
        return Err(Error::Invalid("rules file has no rules".into()));
    }
    let mut topic_names: Vec<String> = Vec::new();
    for r in rules {
        if !topic_names.contains(&r.group) && r.group != OTHER_GROUP {
            topic_names.push(r.group.clone());
        }
    }
    topic_names.push(OTHER_GROUP.into());
    let index = |g: &str| topic_names.iter().position(|t| t == g).expect("group listed");
    let lowered: Vec<(String, &str)> = rules.iter().map(|r| (r.keyword.to_lowercase(), r.group.as_str())).collect();
    let assignments = suite
        .cases
        .iter()
        .map(|c| {
            let text = c.text.to_lowercase();
            let group = lowered
                .iter()
                .find(|(kw, _)| text.contains(kw.as_str()))
                .map_or(OTHER_GROUP, |(_, g)| *g);
            (c.id.clone(), index(group))
        })
        .collect();
    Ok(MftTopicModel {
        k: topic_names.len(),
        assignments,
        topic_names,
    })
}
