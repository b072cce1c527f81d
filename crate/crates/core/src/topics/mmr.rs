use serde::{Deserialize, Serialize};

use crate::embedding::cosine_or_zero;
use crate::error::{Error, Result};

/// Symmetric similarity used by MMR. Zero vectors are similar to nothing.
pub trait Similarity {
    fn similarity(&self, other: &Self) -> f64;
}

impl Similarity for Vec<f64> {
    fn similarity(&self, other: &Self) -> f64 {
        cosine_or_zero(self, other)
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn from_sorted(entries: Vec<(usize, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

impl Similarity for SparseVector {
    fn similarity(&self, other: &Self) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (self.dot(other) / denom).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmrPick<I> {
    pub id: I,
    /// Candidate position in the input slice.
    pub index: usize,
    /// Objective value at the step this candidate was chosen.
    pub score: f64,
}

/// Greedy maximal marginal relevance.
///
/// Each step picks the unselected candidate maximizing
/// `(1 - λ)·sim(D, query) - λ·max_{S} sim(D, S)`. The first pick is always the
/// most relevant candidate. Ties keep input order.
pub fn mmr_select<I: Clone, V: Similarity>(
    candidates: &[(I, V)],
    query: &V,
    lambda: f64,
    n: usize,
) -> Result<Vec<MmrPick<I>>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if n > candidates.len() {
        return Err(Error::Invalid(format!(
            "asked for {n} picks from {} candidates",
            candidates.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let relevance: Vec<f64> = candidates.iter().map(|(_, v)| v.similarity(query)).collect();
    let mut redundancy = vec![f64::NEG_INFINITY; candidates.len()];
    let mut selected = vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(n);

    let first = relevance
        .iter()
        .enumerate()
        .fold(0, |best, (i, &r)| if r > relevance[best] { i } else { best });

    let mut pick = first;
    let mut score = (1.0 - lambda) * relevance[first];
    loop {
        selected[pick] = true;
        picks.push(MmrPick {
            id: candidates[pick].0.clone(),
            index: pick,
            score,
        });
        if picks.len() == n {
            break;
        }
        for i in 0..candidates.len() {
            if !selected[i] {
                let s = candidates[i].1.similarity(&candidates[pick].1);
                if s > redundancy[i] {
                    redundancy[i] = s;
                }
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for i in (0..candidates.len()).filter(|&i| !selected[i]) {
            let value = (1.0 - lambda) * relevance[i] - lambda * redundancy[i];
            if best.is_none_or(|(_, b)| value > b) {
                best = Some((i, value));
            }
        }
        let (i, value) = best.expect("n <= number of candidates");
        pick = i;
        score = value;
    }
    Ok(picks)
}
