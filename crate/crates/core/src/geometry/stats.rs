use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ClusterModel;
use crate::corpus::{Label, LabeledCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub count: usize,
    pub label_counts: BTreeMap<Label, usize>,
    pub majority_label: Label,
    pub majority_label_count: usize,
    pub majority_category: String,
    pub majority_category_count: usize,
    pub majority_category_proportion: f64,
}

impl ClusterSummary {
    pub fn label_proportion(&self, label: Label) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.label_counts.get(&label).copied().unwrap_or(0) as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub clusters: Vec<ClusterSummary>,
}

impl ClusterStats {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cluster",
            "count",
            "positive",
            "negative",
            "majority_category",
            "majority_category_count",
            "majority_category_proportion",
        ])?;
        for c in &self.clusters {
            w.write_record([
                c.cluster.to_string(),
                c.count.to_string(),
                c.label_counts.get(&Label::Positive).copied().unwrap_or(0).to_string(),
                c.label_counts.get(&Label::Negative).copied().unwrap_or(0).to_string(),
                c.majority_category.clone(),
                c.majority_category_count.to_string(),
                format!("{:.2}%", c.majority_category_proportion * 100.0),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

/// Per-cluster size, label split and dominant category. Ties on the majority
/// pick the label `Positive` and the alphabetically first category.
/// Label counts and category counts of one cluster.
type Tally<'a> = (BTreeMap<Label, usize>, BTreeMap<&'a str, usize>);

pub fn cluster_stats(model: &ClusterModel, corpus: &LabeledCorpus) -> Result<ClusterStats> {
    let assignments = model.assignments();
    if assignments.len() != corpus.len() {
        return Err(Error::Invalid(format!(
            "cluster model covers {} ids, corpus has {}",
            assignments.len(),
            corpus.len()
        )));
    }
    let mut per: Vec<Tally> = vec![Default::default(); model.k];
    for doc in &corpus.documents {
        let c = *assignments
            .get(doc.id.as_str())
            .ok_or_else(|| Error::UnknownId(doc.id.clone()))?;
        *per[c].0.entry(doc.label).or_default() += 1;
        *per[c].1.entry(doc.category.as_str()).or_default() += 1;
    }
    let clusters = per
        .into_iter()
        .enumerate()
        .map(|(cluster, (labels, cats))| {
            let count: usize = labels.values().sum();
            let (majority_label, majority_label_count) = [Label::Positive, Label::Negative]
                .into_iter()
                .map(|l| (l, labels.get(&l).copied().unwrap_or(0)))
                .fold((Label::Positive, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
            let (cat, cat_count) = cats
                .iter()
                .fold(("", 0), |best, (&c, &n)| if n > best.1 { (c, n) } else { best });
            ClusterSummary {
                cluster,
                count,
                label_counts: labels,
                majority_label,
                majority_label_count,
                majority_category: cat.to_string(),
                majority_category_count: cat_count,
                majority_category_proportion: if count == 0 { 0.0 } else { cat_count as f64 / count as f64 },
            }
        })
        .collect();
    Ok(ClusterStats { clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use chrono::NaiveDate;

    fn doc(id: &str, cat: &str, label: Label) -> Document {
        Document {
            id: id.into(),
            text: "t".into(),
            label,
            category: cat.into(),
            date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            split: None,
        }
    }

    fn model(ids: &[&str], labels: Vec<usize>, k: usize) -> ClusterModel {
        ClusterModel {
            k,
            centroids: vec![vec![0.0]; k],
            ids: ids.iter().map(|s| s.to_string()).collect(),
            labels,
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_trace: vec![],
        }
    }

    #[test]
    fn hand_count() {
        let corpus = LabeledCorpus::new(vec![
            doc("a", "A", Label::Positive),
            doc("b", "A", Label::Negative),
            doc("c", "B", Label::Positive),
        ])
        .unwrap();
        let stats = cluster_stats(&model(&["a", "b", "c"], vec![0, 0, 0], 1), &corpus).unwrap();
        let c = &stats.clusters[0];
        assert_eq!((c.majority_category.as_str(), c.majority_category_count), ("A", 2));
        assert!((c.majority_category_proportion - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.majority_label_count, 2);
    }

    #[test]
    fn single_category_is_full_proportion() {
        let corpus = LabeledCorpus::new(vec![doc("a", "Toys", Label::Positive)]).unwrap();
        let stats = cluster_stats(&model(&["a"], vec![0], 1), &corpus).unwrap();
        assert_eq!(stats.clusters[0].majority_category_proportion, 1.0);
    }

    #[test]
    fn table_one_row_zero_shape() {
        let mut docs = Vec::new();
        for i in 0..7006 {
            let cat = if i < 6806 { "Books" } else { "Video" };
            docs.push(doc(&format!("d{i}"), cat, Label::Positive));
        }
        let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        let corpus = LabeledCorpus::new(docs).unwrap();
        let m = ClusterModel {
            ids,
            ..model(&[], vec![0; 7006], 1)
        };
        let stats = cluster_stats(&m, &corpus).unwrap();
        let c = &stats.clusters[0];
        assert_eq!((c.count, c.majority_category_count), (7006, 6806));
        assert_eq!(format!("{:.2}%", c.majority_category_proportion * 100.0), "97.15%");
    }

    #[test]
    fn id_mismatch_is_error() {
        let corpus = LabeledCorpus::new(vec![doc("a", "A", Label::Positive)]).unwrap();
        assert!(cluster_stats(&model(&["zz"], vec![0], 1), &corpus).is_err());
    }
}
