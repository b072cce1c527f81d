use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::mmr::SparseVector;
use super::tokenize::{tokenize, TokenizerConfig};
use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::geometry::ClusterModel;

/// Per-class term counts. A "class" is a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTermStats {
    /// Sorted vocabulary.
    pub vocabulary: Vec<String>,
    /// `tf[c][x]`: occurrences of term `x` in class `c`.
    pub tf: Vec<Vec<u64>>,
    /// `f[x]`: occurrences of term `x` across all classes.
    pub f: Vec<u64>,
    /// Average number of tokens per class.
    pub avg_words: f64,
    index: HashMap<String, usize>,
}

impl ClassTermStats {
    pub fn k(&self) -> usize {
        self.tf.len()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// `ln(1 + A / f_x)`.
    pub fn idf(&self, term: usize) -> f64 {
        (1.0 + self.avg_words / self.f[term] as f64).ln()
    }

    /// `W_{x,c} = tf_{x,c} · ln(1 + A / f_x)`.
    pub fn weight(&self, class: usize, term: usize) -> f64 {
        let tf = self.tf[class][term];
        if tf == 0 {
            return 0.0;
        }
        tf as f64 * self.idf(term)
    }

    /// The class signature as a sparse vector over the vocabulary.
    pub fn class_vector(&self, class: usize) -> SparseVector {
        SparseVector::from_sorted(
            self.tf[class]
                .iter()
                .enumerate()
                .filter(|(_, &t)| t > 0)
                .map(|(x, _)| (x, self.weight(class, x)))
                .collect(),
        )
    }

    /// A document's term counts reweighted by the same idf factor as the class
    /// signatures. Terms outside the vocabulary are ignored.
    pub fn document_vector(&self, text: &str, tokenizer: &TokenizerConfig) -> SparseVector {
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for tok in tokenize(text, tokenizer) {
            if let Some(x) = self.term_index(&tok) {
                *counts.entry(x).or_default() += 1;
            }
        }
        SparseVector::from_sorted(counts.into_iter().map(|(x, n)| (x, n as f64 * self.idf(x))).collect())
    }
}

/// Builds term statistics from `(text, class)` pairs over `k` classes.
pub fn class_term_stats_for<'a>(
    docs: impl IntoIterator<Item = (&'a str, usize)>,
    k: usize,
    tokenizer: &TokenizerConfig,
) -> Result<ClassTermStats> {
    let tokenized: Vec<(Vec<String>, usize)> = docs
        .into_iter()
        .map(|(text, c)| (tokenize(text, tokenizer), c))
        .collect();
    if let Some((_, c)) = tokenized.iter().find(|(_, c)| *c >= k) {
        return Err(Error::Invalid(format!("class {c} out of range for k = {k}")));
    }
    let vocabulary: Vec<String> = tokenized
        .iter()
        .flat_map(|(toks, _)| toks.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if vocabulary.is_empty() {
        return Err(Error::Invalid("empty vocabulary after tokenization".into()));
    }
    let index: HashMap<String, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let mut tf = vec![vec![0u64; vocabulary.len()]; k];
    let mut total = 0u64;
    for (toks, c) in &tokenized {
        for t in toks {
            tf[*c][index[t]] += 1;
            total += 1;
        }
    }
    let f = (0..vocabulary.len()).map(|x| tf.iter().map(|row| row[x]).sum()).collect();
    Ok(ClassTermStats {
        vocabulary,
        tf,
        f,
        avg_words: total as f64 / k as f64,
        index,
    })
}

pub fn class_term_stats(
    corpus: &LabeledCorpus,
    model: &ClusterModel,
    tokenizer: &TokenizerConfig,
) -> Result<ClassTermStats> {
    let assignments = model.assignments();
    let pairs = corpus
        .documents
        .iter()
        .map(|d| {
            assignments
                .get(d.id.as_str())
                .map(|&c| (d.text.as_str(), c))
                .ok_or_else(|| Error::UnknownId(d.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    class_term_stats_for(pairs, model.k, tokenizer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSignature {
    pub cluster: usize,
    /// Only terms that occur in the class.
    pub weights: BTreeMap<String, f64>,
    pub raw_keywords: Vec<String>,
    pub reranked_keywords: Vec<String>,
    pub topic_name: String,
}

/// c-TF-IDF signature of every class; keyword fields are left empty.
pub fn ctfidf(stats: &ClassTermStats) -> Vec<TopicSignature> {
    (0..stats.k())
        .map(|c| TopicSignature {
            cluster: c,
            weights: stats
                .tf[c]
                .iter()
                .enumerate()
                .filter(|(_, &t)| t > 0)
                .map(|(x, _)| (stats.vocabulary[x].clone(), stats.weight(c, x)))
                .collect(),
            raw_keywords: Vec::new(),
            reranked_keywords: Vec::new(),
            topic_name: String::new(),
        })
        .collect()
}

/// `cluster,term,weight` rows, sorted by cluster then term.
pub fn signatures_to_csv(signatures: &[TopicSignature]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cluster", "term", "weight"])?;
    for sig in signatures {
        for (term, weight) in &sig.weights {
            w.write_record([sig.cluster.to_string(), term.clone(), weight.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}
