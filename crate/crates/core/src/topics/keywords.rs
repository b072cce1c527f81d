use super::ctfidf::TopicSignature;
use crate::embedding::{cosine, Embedder, EmbeddingMatrix};
use crate::error::{Error, Result};

const NAME_KEYWORDS: usize = 4;

/// Top `top_n` terms by weight; equal weights fall back to term order.
pub fn raw_keywords(sig: &TopicSignature, top_n: usize) -> Vec<String> {
    let mut terms: Vec<(&String, f64)> = sig
        .weights
        .iter()
        .filter(|(_, &w)| w > 0.0)
        .map(|(t, &w)| (t, w))
        .collect();
    terms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(b.0)));
    terms.into_iter().take(top_n).map(|(t, _)| t.clone()).collect()
}

/// `{cluster}_kw1_kw2_kw3_kw4`.
pub fn topic_name(cluster: usize, keywords: &[String]) -> String {
    let mut parts = vec![cluster.to_string()];
    parts.extend(keywords.iter().take(NAME_KEYWORDS).cloned());
    if parts.len() == 1 {
        parts.push("topic".into());
    }
    parts.join("_")
}

/// Fills keyword lists and the topic name.
///
/// Raw keywords are re-ordered by cosine similarity between each keyword's
/// embedding and the mean embedding of the representative documents.
pub fn topic_keywords(
    sig: &TopicSignature,
    rep_doc_embeddings: &EmbeddingMatrix,
    embedder: &dyn Embedder,
    top_n: usize,
) -> Result<TopicSignature> {
    let raw = raw_keywords(sig, top_n);
    if raw.len() < top_n {
        log::warn!(
            "cluster {}: only {} positive-weight terms for top_n = {top_n}",
            sig.cluster,
            raw.len()
        );
    }
    if rep_doc_embeddings.is_empty() {
        return Err(Error::Precondition(format!(
            "cluster {} has no representative embeddings",
            sig.cluster
        )));
    }
    let centroid = rep_doc_embeddings.mean();
    let vectors = if raw.is_empty() { Vec::new() } else { embedder.embed(&raw)? };
    let mut scored: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| cosine(v, &centroid).map(|s| (i, s)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    let reranked: Vec<String> = scored.iter().map(|&(i, _)| raw[i].clone()).collect();
    Ok(TopicSignature {
        topic_name: topic_name(sig.cluster, &reranked),
        raw_keywords: raw,
        reranked_keywords: reranked,
        ..sig.clone()
    })
}
