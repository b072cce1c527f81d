use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{squared_distance, ReducedMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative inertia improvement drops below this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub ids: Vec<String>,
    /// `labels[i]` is the cluster of `ids[i]`.
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after every assignment step, starting with the initial centroids.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn assignments(&self) -> HashMap<&str, usize> {
        self.ids.iter().map(String::as_str).zip(self.labels.iter().copied()).collect()
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == cluster)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, centroids);
        labels[i] = c;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

/// Draws an index with probability proportional to `weights`; uniform when all are zero.
fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.gen_range(0..weights.len());
    }
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Greedy k-means++: each new center is the best of a few D²-weighted draws.
fn init_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = weighted_pick(rng, &closest);
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &d)| d.min(squared_distance(p, &points[cand])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((cand, potential, updated));
            }
        }
        let (cand, _, updated) = best.expect("at least one trial");
        centroids.push(points[cand].clone());
        closest = updated;
    }
    centroids
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// A cluster that loses all its points is re-seeded at the point farthest from
/// its current centroid.
pub fn kmeans(m: &ReducedMatrix, params: &KMeansParams) -> Result<ClusterModel> {
    let points = &m.coords;
    let n = points.len();
    let k = params.k;
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Invalid(format!("k = {k} exceeds the number of points ({n})")));
    }
    if params.max_iters == 0 {
        return Err(Error::Invalid("max_iters must be at least 1".into()));
    }
    let dim = m.dims();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut inertia = assign(points, &centroids, &mut labels, &mut dists);
    let mut trace = vec![inertia];
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                let cnt = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / cnt).collect();
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n leaves a free point");
                taken[far] = true;
                log::debug!("kmeans: re-seeding empty cluster {c} at point {far}");
                centroids[c] = points[far].clone();
            }
        }

        let previous = inertia;
        inertia = assign(points, &centroids, &mut labels, &mut dists);
        trace.push(inertia);
        if previous <= 0.0 || (previous - inertia) / previous < params.tol {
            break;
        }
    }

    Ok(ClusterModel {
        k,
        centroids,
        ids: m.ids.clone(),
        labels,
        inertia,
        seed: params.seed,
        iterations_run: iterations,
        inertia_trace: trace,
    })
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    let n = a.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Mean silhouette coefficient (Euclidean). Singleton clusters score 0.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 || points.len() < 2 {
        return 0.0;
    }
    let sizes = labels.iter().fold(vec![0usize; k], |mut acc, &l| {
        acc[l] += 1;
        acc
    });
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += squared_distance(p, q).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / points.len() as f64
}

/// Runs k-means for every k in `ks` and reports the silhouette of each.
pub fn sweep_k(m: &ReducedMatrix, ks: &[usize], base: &KMeansParams) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            let model = kmeans(m, &KMeansParams { k, ..*base })?;
            Ok((k, silhouette_score(&m.coords, &model.labels)))
        })
        .collect()
}
