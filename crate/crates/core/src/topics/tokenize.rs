use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// A short English list, available when stopword filtering is switched on.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he", "her", "his",
    "i", "in", "is", "it", "its", "me", "my", "of", "on", "or", "our", "she", "so", "that", "the", "their",
    "them", "they", "this", "to", "was", "we", "were", "with", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Minimum token length in characters.
    pub min_len: usize,
    pub stopwords: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            min_len: 2,
            stopwords: BTreeSet::new(),
        }
    }
}

impl TokenizerConfig {
    pub fn with_english_stopwords() -> Self {
        Self {
            stopwords: ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }
}

/// Lowercased Unicode words. Underscores split words so keywords can be
/// joined with `_` unambiguously.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .unicode_words()
        .flat_map(|w| w.split('_'))
        .filter(|w| w.chars().count() >= config.min_len && !config.stopwords.contains(*w))
        .map(str::to_string)
        .collect()
}
