//! Token conventions shared by curation, the vocabulary and the metrics.

/// Maximal runs of non-whitespace.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn token_count(text: &str) -> usize {
    tokens(text).count()
}

/// Tokens rejoined with single spaces.
pub fn normalize_ws(text: &str) -> String {
    tokens(text).collect::<Vec<_>>().join(" ")
}

/// Lowercased whitespace tokens, the tokenization used for metrics and the vocabulary.
pub fn metric_tokens(text: &str) -> Vec<String> {
    tokens(text).map(str::to_lowercase).collect()
}
