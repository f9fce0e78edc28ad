//! Caption metrics over single-reference pairs: corpus BLEU@4, exact-match
//! METEOR, ROUGE-L and CIDEr.
//!
//! All metrics consume lowercased whitespace tokens (see [`EvalPair::new`]).

mod bleu;
mod cider;
mod meteor;
mod report;
mod rouge;

pub use bleu::{bleu4, sentence_bleu4};
pub use cider::cider;
pub use meteor::{meteor, meteor_stats, MeteorStats};
pub use report::{evaluate, write_report_tsv, MetricReport, Table, METEOR_NOTE};
pub use rouge::{lcs_len, rouge_l, DEFAULT_BETA};

use thiserror::Error;

use crate::text::metric_tokens;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric needs at least one pair")]
    EmptyCorpus,
    #[error("CIDEr needs at least two pairs to estimate document frequencies, got {0}")]
    CorpusTooSmall(usize),
    #[error("no reference for prediction ({0}, {1})")]
    MissingReference(String, String),
}

/// Candidate and single reference, both tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

impl EvalPair {
    pub fn new(candidate: &str, reference: &str) -> Self {
        Self {
            candidate: metric_tokens(candidate),
            reference: metric_tokens(reference),
        }
    }
}

/// Multiset of n-grams of one order.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> std::collections::BTreeMap<&[String], usize> {
    let mut counts = std::collections::BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}
