use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    Pca,
    /// Coordinates computed elsewhere (e.g. UMAP) and loaded from CSV.
    ExternalImport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMatrix {
    pub ids: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    pub method: ReductionMethod,
    pub seed: u64,
    /// Variance along each returned component (PCA only), non-increasing.
    pub explained_variance: Vec<f64>,
}

impl ReducedMatrix {
    pub fn dims(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Plain Euclidean coordinates (no ids), e.g. for tests.
    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        Self {
            ids: (0..points.len()).map(|i| format!("p{i}")).collect(),
            coords: points,
            method: ReductionMethod::ExternalImport,
            seed: 0,
            explained_variance: Vec::new(),
        }
    }
}

pub fn reduce(
    m: &EmbeddingMatrix,
    target_dims: usize,
    method: ReductionMethod,
    seed: u64,
    external: Option<&Path>,
) -> Result<ReducedMatrix> {
    match method {
        ReductionMethod::Pca => reduce_pca(m, target_dims, seed),
        ReductionMethod::ExternalImport => {
            let path = external.ok_or_else(|| {
                Error::Invalid("external_import reduction needs a coordinates file".into())
            })?;
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let r = import_coords(file, m)?;
            if r.dims() != target_dims {
                return Err(Error::DimensionMismatch {
                    expected: target_dims,
                    actual: r.dims(),
                });
            }
            Ok(ReducedMatrix { seed, ..r })
        }
    }
}

/// Projects mean-centered rows onto the top principal components.
///
/// Components are ordered by descending variance and each is sign-fixed so its
/// largest-magnitude loading is positive. The routine has no randomness; `seed`
/// is only recorded.
pub fn reduce_pca(m: &EmbeddingMatrix, target_dims: usize, seed: u64) -> Result<ReducedMatrix> {
    let (n, d) = (m.len(), m.dim());
    if target_dims == 0 {
        return Err(Error::Invalid("target_dims must be at least 1".into()));
    }
    if target_dims > d {
        return Err(Error::Invalid(format!(
            "target_dims {target_dims} exceeds embedding dimension {d}"
        )));
    }
    if n < 2 {
        return Err(Error::Invalid("pca needs at least 2 rows".into()));
    }

    let mean = m.mean();
    let x = DMatrix::from_fn(n, d, |i, j| m.row(i)[j] - mean[j]);
    let cov = x.tr_mul(&x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        log::warn!("pca: all points identical (zero variance); coordinates are all zero");
        return Ok(ReducedMatrix {
            ids: m.ids().to_vec(),
            coords: vec![vec![0.0; target_dims]; n],
            method: ReductionMethod::Pca,
            seed,
            explained_variance: vec![0.0; target_dims],
        });
    }

    let mut components = DMatrix::zeros(d, target_dims);
    let mut explained = Vec::with_capacity(target_dims);
    for (c, &k) in order.iter().take(target_dims).enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        components.set_column(c, &v);
        explained.push(eig.eigenvalues[k].max(0.0));
    }

    let projected = &x * &components;
    let coords = (0..n)
        .map(|i| (0..target_dims).map(|j| projected[(i, j)]).collect())
        .collect();
    Ok(ReducedMatrix {
        ids: m.ids().to_vec(),
        coords,
        method: ReductionMethod::Pca,
        seed,
        explained_variance: explained,
    })
}

/// Reads `id,c1..cr` CSV and reorders rows to match `reference`.
pub fn import_coords(reader: impl Read, reference: &EmbeddingMatrix) -> Result<ReducedMatrix> {
    let parsed = parse_coords(reader)?;
    let r = parsed.first().map_or(0, |(_, c)| c.len());
    if r > reference.dim() {
        return Err(Error::Invalid(format!(
            "imported coordinates have {r} dims, more than the embedding dimension {}",
            reference.dim()
        )));
    }
    let by_id: HashMap<&str, &Vec<f64>> = parsed.iter().map(|(id, c)| (id.as_str(), c)).collect();
    if by_id.len() != reference.len() {
        return Err(Error::Invalid(format!(
            "coordinates file has {} rows, embeddings have {}",
            by_id.len(),
            reference.len()
        )));
    }
    let coords = reference
        .ids()
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|c| (*c).clone()).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReducedMatrix {
        ids: reference.ids().to_vec(),
        coords,
        method: ReductionMethod::ExternalImport,
        seed: 0,
        explained_variance: Vec::new(),
    })
}

/// Parses a coordinates CSV without any reference matrix.
pub fn parse_coords(reader: impl Read) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("id") || headers.len() < 2 {
        return Err(Error::Parse("coordinates header must be `id,c1..cr`".into()));
    }
    let r = headers.len() - 1;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != r + 1 {
            return Err(Error::DimensionMismatch {
                expected: r,
                actual: rec.len().saturating_sub(1),
            });
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let coords = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse(format!("bad coordinate `{v}` for `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((id, coords));
    }
    Ok(out)
}

pub fn export_coords(m: &ReducedMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend((1..=m.dims()).map(|i| format!("c{i}")));
    w.write_record(&header)?;
    for (id, row) in m.ids.iter().zip(&m.coords) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::squared_distance;

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::new(ids, rows).unwrap()
    }

    fn pairwise(points: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                out.push(squared_distance(&points[i], &points[j]).sqrt());
            }
        }
        out
    }

    #[test]
    fn full_rank_projection_is_isometry() {
        let rows = vec![
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.7, -1.2, 1.1],
            vec![2.2, 0.1, -0.4],
            vec![0.0, 0.9, 0.9],
        ];
        let r = reduce_pca(&matrix(rows.clone()), 3, 0).unwrap();
        for (a, b) in pairwise(&rows).iter().zip(pairwise(&r.coords)) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(r.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn collinear_points_keep_distance_ratios() {
        // Points at t = 0, 1, 3 along direction (1, 2, 2).
        let rows = vec![vec![1.0, 1.0, 1.0], vec![2.0, 3.0, 3.0], vec![4.0, 7.0, 7.0]];
        let r = reduce_pca(&matrix(rows.clone()), 1, 0).unwrap();
        let orig = pairwise(&rows);
        let red = pairwise(&r.coords);
        for (a, b) in orig.iter().zip(&red) {
            assert!((a / orig[0] - b / red[0]).abs() < 1e-8);
        }
        // The pure spread along t = 0, 1, 3 scaled by |(1,2,2)| = 3.
        assert!((red[0] - 3.0).abs() < 1e-8 && (red[1] - 9.0).abs() < 1e-8);
    }

    #[test]
    fn sign_convention_and_determinism() {
        let rows = vec![vec![0.0, 0.0], vec![-1.0, -3.0], vec![2.0, 1.0], vec![0.5, 4.0]];
        let m = matrix(rows);
        let a = reduce_pca(&m, 2, 9).unwrap();
        let b = reduce_pca(&m, 2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_and_invalid() {
        let same = matrix(vec![vec![1.0, 1.0]; 3]);
        let r = reduce_pca(&same, 1, 0).unwrap();
        assert!(r.coords.iter().all(|c| c == &vec![0.0]));
        assert!(reduce_pca(&same, 3, 0).is_err());
        assert!(reduce_pca(&matrix(vec![vec![1.0, 2.0]]), 1, 0).is_err());
    }

    #[test]
    fn coords_csv_round_trip() {
        let m = matrix(vec![vec![0.1, 0.2, 0.3], vec![1.5, -2.0, 0.0], vec![3.0, 3.0, 1.0]]);
        let r = reduce_pca(&m, 2, 0).unwrap();
        let bytes = export_coords(&r).unwrap();
        let back = import_coords(bytes.as_slice(), &m).unwrap();
        assert_eq!(back.coords, r.coords);
    }
}
