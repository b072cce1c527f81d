//! Class-based TF-IDF topic signatures, keyword re-ranking, and diverse
//! representative-document selection with maximal marginal relevance.

mod ctfidf;
mod keywords;
mod mmr;
mod represent;
mod tokenize;

pub use ctfidf::{class_term_stats, class_term_stats_for, ctfidf, signatures_to_csv, ClassTermStats, TopicSignature};
pub use keywords::{raw_keywords, topic_keywords, topic_name};
pub use mmr::{mmr_select, MmrPick, Similarity, SparseVector};
pub use represent::{
    largest_remainder, quotas_from_counts, select_representatives, RepresentativePick, RepresentativeSet,
    SelectionParams, SelectionSpace,
};
pub use tokenize::{tokenize, TokenizerConfig, ENGLISH_STOPWORDS};
