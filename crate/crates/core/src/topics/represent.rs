use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ctfidf::ClassTermStats;
use super::mmr::{mmr_select, MmrPick};
use super::tokenize::TokenizerConfig;
use crate::corpus::{Document, Label};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Vector space the MMR similarities are computed in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSpace {
    #[default]
    Ctfidf,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub pool_size: usize,
    pub n: usize,
    pub lambda: f64,
    pub seed: u64,
    pub space: SelectionSpace,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            pool_size: 500,
            n: 10,
            lambda: 0.5,
            seed: 0,
            space: SelectionSpace::Ctfidf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativePick {
    pub cluster: usize,
    pub seed: u64,
    pub rank: usize,
    pub doc_id: String,
    pub label: Label,
    pub selection_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub cluster: usize,
    pub seed: u64,
    pub picks: Vec<RepresentativePick>,
    pub lambda: f64,
    /// Number of candidates actually drawn.
    pub candidate_pool_size: usize,
    pub per_label_quota: BTreeMap<Label, usize>,
}

impl RepresentativeSet {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.picks.iter().map(|p| p.doc_id.as_str()).collect()
    }

    /// Rebuilds sets from exported pick rows (ordered by rank within each set).
    pub fn from_picks(picks: Vec<RepresentativePick>, lambda: f64) -> Vec<RepresentativeSet> {
        let mut groups: BTreeMap<(u64, usize), Vec<RepresentativePick>> = BTreeMap::new();
        for p in picks {
            groups.entry((p.seed, p.cluster)).or_default().push(p);
        }
        groups
            .into_iter()
            .map(|((seed, cluster), mut picks)| {
                picks.sort_by_key(|p| p.rank);
                let mut quota = BTreeMap::new();
                for p in &picks {
                    *quota.entry(p.label).or_insert(0) += 1;
                }
                RepresentativeSet {
                    cluster,
                    seed,
                    candidate_pool_size: picks.len(),
                    picks,
                    lambda,
                    per_label_quota: quota,
                }
            })
            .collect()
    }
}

/// Largest-remainder apportionment of `n` seats over non-negative `weights`.
/// Leftover seats go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let remainders: Vec<f64> = exact.iter().zip(&quotas).map(|(e, &q)| e - q as f64).collect();
    distribute(&mut quotas, n, |a, b| remainders[b].partial_cmp(&remainders[a]).unwrap_or(std::cmp::Ordering::Equal));
    quotas
}

/// Integer-exact largest remainder for class counts.
pub fn quotas_from_counts(n: usize, counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| n * c / total).collect();
    let remainders: Vec<usize> = counts.iter().map(|&c| n * c % total).collect();
    distribute(&mut quotas, n, |a, b| remainders[b].cmp(&remainders[a]));
    quotas
}

fn distribute(quotas: &mut [usize], n: usize, order: impl Fn(usize, usize) -> std::cmp::Ordering) {
    let assigned: usize = quotas.iter().sum();
    let mut idx: Vec<usize> = (0..quotas.len()).collect();
    idx.sort_by(|&a, &b| order(a, b).then(a.cmp(&b)));
    for &i in idx.iter().cycle().take(n.saturating_sub(assigned)) {
        quotas[i] += 1;
    }
}

enum Vectors {
    Ctfidf(Vec<super::mmr::SparseVector>, super::mmr::SparseVector),
    Embedding(Vec<Vec<f64>>, Vec<f64>),
}

/// Picks up to `params.n` representatives of one cluster.
///
/// A uniform seeded pool of at most `pool_size` candidates is drawn, seats are
/// split across labels in proportion to the cluster's label mix, and MMR runs
/// inside each label stratum against the topic vector. `docs` are the cluster
/// members in corpus order.
pub fn select_representatives(
    cluster: usize,
    docs: &[&Document],
    stats: &ClassTermStats,
    tokenizer: &TokenizerConfig,
    params: &SelectionParams,
    embeddings: Option<&EmbeddingMatrix>,
) -> Result<RepresentativeSet> {
    if docs.is_empty() {
        return Err(Error::Precondition(format!("cluster {cluster} has no documents")));
    }
    if cluster >= stats.k() {
        return Err(Error::Invalid(format!("cluster {cluster} not in term stats")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (cluster as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let pool: Vec<&Document> = if docs.len() <= params.pool_size {
        docs.to_vec()
    } else {
        let mut picked = index::sample(&mut rng, docs.len(), params.pool_size).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| docs[i]).collect()
    };

    let counts: Vec<usize> = Label::ALL
        .iter()
        .map(|l| docs.iter().filter(|d| d.label == *l).count())
        .collect();
    let available: Vec<usize> = Label::ALL
        .iter()
        .map(|l| pool.iter().filter(|d| d.label == *l).count())
        .collect();
    let n = params.n.min(pool.len());
    let mut quotas = quotas_from_counts(n, &counts);
    // Shift seats a stratum cannot fill to the other one.
    for i in 0..quotas.len() {
        if quotas[i] > available[i] {
            let extra = quotas[i] - available[i];
            quotas[i] = available[i];
            let j = 1 - i;
            quotas[j] = (quotas[j] + extra).min(available[j]);
        }
    }

    let vectors = match params.space {
        SelectionSpace::Ctfidf => Vectors::Ctfidf(
            pool.iter().map(|d| stats.document_vector(&d.text, tokenizer)).collect(),
            stats.class_vector(cluster),
        ),
        SelectionSpace::Embedding => {
            let m = embeddings.ok_or_else(|| {
                Error::Invalid("embedding selection space needs document embeddings".into())
            })?;
            let all: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
            let query = m.select(&all)?.mean();
            let ids: Vec<String> = pool.iter().map(|d| d.id.clone()).collect();
            let sel = m.select(&ids)?;
            Vectors::Embedding(sel.rows().map(<[f64]>::to_vec).collect(), query)
        }
    };

    let mut picks = Vec::new();
    for (li, label) in Label::ALL.iter().enumerate() {
        if quotas[li] == 0 {
            continue;
        }
        let members: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].label == *label).collect();
        let chosen: Vec<MmrPick<usize>> = match &vectors {
            Vectors::Ctfidf(v, q) => {
                let cands: Vec<(usize, _)> = members.iter().map(|&i| (i, v[i].clone())).collect();
                mmr_select(&cands, q, params.lambda, quotas[li])?
            }
            Vectors::Embedding(v, q) => {
                let cands: Vec<(usize, _)> = members.iter().map(|&i| (i, v[i].clone())).collect();
                mmr_select(&cands, q, params.lambda, quotas[li])?
            }
        };
        for p in chosen {
            picks.push(RepresentativePick {
                cluster,
                seed: params.seed,
                rank: picks.len(),
                doc_id: pool[p.id].id.clone(),
                label: *label,
                selection_score: p.score,
            });
        }
    }

    Ok(RepresentativeSet {
        cluster,
        seed: params.seed,
        picks,
        lambda: params.lambda,
        candidate_pool_size: pool.len(),
        per_label_quota: Label::ALL.iter().copied().zip(quotas).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_sixty_split() {
        assert_eq!(quotas_from_counts(10, &[6, 4]), vec![6, 4]);
        assert_eq!(largest_remainder(10, &[0.6, 0.4]), vec![6, 4]);
    }

    #[test]
    fn remainder_goes_to_largest_fraction() {
        // 7 × (1/3, 1/3, 1/3) = 2.33 each, one leftover seat to the first.
        assert_eq!(quotas_from_counts(7, &[1, 1, 1]), vec![3, 2, 2]);
        // 5 × (0.55, 0.45) = 2.75 / 2.25
        assert_eq!(quotas_from_counts(5, &[55, 45]), vec![3, 2]);
        assert_eq!(quotas_from_counts(3, &[0, 0]), vec![0, 0]);
    }
}
