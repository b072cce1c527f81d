//! Dimension reduction, k-means clustering and per-cluster composition.

mod kmeans;
mod pca;
mod stats;

pub use kmeans::{adjusted_rand_index, kmeans, silhouette_score, sweep_k, ClusterModel, KMeansParams};
pub use pca::{export_coords, import_coords, parse_coords, reduce, reduce_pca, ReducedMatrix, ReductionMethod};
pub use stats::{cluster_stats, ClusterStats, ClusterSummary};

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
