//! Greedy and beam-search decoding with trigram blocking, and reranking of
//! beam candidates by similarity to the tweet text.

use std::cmp::Ordering;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::captioner::log_softmax;
use crate::metrics::{rouge_l, sentence_bleu4, DEFAULT_BETA};
use crate::text::metric_tokens;
use crate::tokenizer::EOS;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no candidates to rerank")]
    EmptyCandidates,
    #[error("predictions line {0}: {1}")]
    BadPrediction(usize, String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Next-token scorer over a growing generated sequence.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Unnormalized scores for the token following `generated`.
    fn next_logits(&self, generated: &[u32]) -> Vec<f64>;

    /// Hard cap on generated tokens (including EOS) imposed by the model.
    fn max_steps(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Greedy,
    BeamSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rerank {
    None,
    RougeL,
    Bleu,
}

impl FromStr for Rerank {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Rerank::None),
            "rougel" | "rouge-l" | "rouge_l" => Ok(Rerank::RougeL),
            "bleu" => Ok(Rerank::Bleu),
            _ => Err(format!("unknown rerank metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub method: Method,
    pub beam_size: usize,
    pub block_trigrams: bool,
    /// Maximum generated tokens, EOS included.
    pub max_len: usize,
    pub rerank: Rerank,
    /// Scores are divided by `len^length_penalty` when ranking; 0 ranks by raw
    /// cumulative log-probability.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            method: Method::BeamSearch,
            beam_size: 5,
            block_trigrams: false,
            max_len: 150,
            rerank: Rerank::None,
            length_penalty: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self {
            method: Method::Greedy,
            beam_size: 1,
            ..Self::default()
        }
    }

    /// Short label in the style of a results table row, e.g. `BS (NR) + RR`.
    pub fn label(&self) -> String {
        let mut s = match self.method {
            Method::Greedy => "Greedy".to_string(),
            Method::BeamSearch => "BS".to_string(),
        };
        if self.block_trigrams {
            s.push_str(" (NR)");
        }
        match self.rerank {
            Rerank::None => {}
            Rerank::RougeL => s.push_str(" + RR"),
            Rerank::Bleu => s.push_str(" + RR-BLEU"),
        }
        s
    }
}

/// A decoded token sequence. `ids` include the final EOS when one was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub ids: Vec<u32>,
    /// Sum of token log-probabilities in nats.
    pub score: f64,
    pub beam_rank: usize,
}

impl Candidate {
    /// Token IDs without the trailing EOS.
    pub fn caption_ids(&self) -> &[u32] {
        match self.ids.last() {
            Some(&EOS) => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }
}

/// Sets to −∞ every token that would complete a trigram already present in
/// `hypothesis`.
pub fn block_trigrams(hypothesis: &[u32], logits: &mut [f64]) {
    let n = hypothesis.len();
    if n < 2 {
        return;
    }
    let (a, b) = (hypothesis[n - 2], hypothesis[n - 1]);
    for w in hypothesis.windows(3) {
        if w[0] == a && w[1] == b {
            if let Some(l) = logits.get_mut(w[2] as usize) {
                *l = f64::NEG_INFINITY;
            }
        }
    }
}

fn step_log_probs<M: LanguageModel + ?Sized>(model: &M, prefix: &[u32], block: bool) -> Vec<f64> {
    let mut lp = log_softmax(&model.next_logits(prefix));
    if block {
        block_trigrams(prefix, &mut lp);
    }
    lp
}

fn effective_max_len<M: LanguageModel + ?Sized>(model: &M, config: &DecodeConfig) -> usize {
    model.max_steps().map_or(config.max_len, |m| m.min(config.max_len))
}

/// Argmax decoding (ties to the smallest token ID) until EOS or `max_len`.
pub fn greedy<M: LanguageModel + ?Sized>(model: &M, config: &DecodeConfig) -> Candidate {
    let max_len = effective_max_len(model, config);
    let mut ids = Vec::new();
    let mut score = 0.0;
    while ids.len() < max_len {
        let lp = step_log_probs(model, &ids, config.block_trigrams);
        let mut best: Option<(usize, f64)> = None;
        for (tok, &v) in lp.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((tok, v));
            }
        }
        let Some((tok, v)) = best else { break };
        ids.push(tok as u32);
        score += v;
        if tok as u32 == EOS {
            break;
        }
    }
    Candidate {
        ids,
        score,
        beam_rank: 0,
    }
}

fn ranking_score(score: f64, len: usize, length_penalty: f64) -> f64 {
    if length_penalty == 0.0 {
        score
    } else {
        score / (len.max(1) as f64).powf(length_penalty)
    }
}

fn by_score(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64), lp: f64) -> Ordering {
    ranking_score(b.1, b.0.len(), lp)
        .partial_cmp(&ranking_score(a.1, a.0.len(), lp))
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// Length-unnormalized beam search.
///
/// Every live hypothesis is expanded by every (unblocked) token and the best
/// `beam_size` expansions are kept. Kept expansions ending in EOS are set
/// aside as finished; the rest stay live. Hypotheses still live at `max_len`
/// are finished as-is. Returns up to `beam_size` finished hypotheses by score,
/// ties broken by the token sequence.
pub fn beam_search<M: LanguageModel + ?Sized>(model: &M, config: &DecodeConfig) -> Vec<Candidate> {
    assert!(config.beam_size >= 1, "beam_size must be at least 1");
    let max_len = effective_max_len(model, config);
    let lp = config.length_penalty;
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut expansions = Vec::with_capacity(live.len() * model.vocab_size());
        for (ids, score) in &live {
            let probs = step_log_probs(model, ids, config.block_trigrams);
            for (tok, &v) in probs.iter().enumerate() {
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let mut next = ids.clone();
                next.push(tok as u32);
                expansions.push((next, score + v));
            }
        }
        expansions.sort_by(|a, b| by_score(a, b, lp));
        expansions.truncate(config.beam_size);
        live.clear();
        for (ids, score) in expansions {
            if ids.last() == Some(&EOS) {
                finished.push((ids, score));
            } else {
                live.push((ids, score));
            }
        }
    }
    finished.extend(live);
    finished.sort_by(|a, b| by_score(a, b, lp));
    finished.truncate(config.beam_size);
    finished
        .into_iter()
        .enumerate()
        .map(|(rank, (ids, score))| Candidate {
            ids,
            score,
            beam_rank: rank,
        })
        .collect()
}

/// Picks the candidate whose text is most similar to `tweet_text`; ties go
/// to the best beam rank.
pub fn rerank<'c>(
    candidates: &'c [(Candidate, String)],
    tweet_text: &str,
    metric: Rerank,
) -> Result<&'c (Candidate, String), DecodeError> {
    let reference = metric_tokens(tweet_text);
    let score = |text: &str| {
        let toks = metric_tokens(text);
        match metric {
            Rerank::None => 0.0,
            Rerank::RougeL => rouge_l(&toks, &reference, DEFAULT_BETA),
            Rerank::Bleu => sentence_bleu4(&toks, &reference),
        }
    };
    candidates
        .iter()
        .map(|c| (score(&c.1), c))
        .max_by(|(sa, a), (sb, b)| {
            sa.partial_cmp(sb)
                .unwrap_or(Ordering::Equal)
                .then_with(|| b.0.beam_rank.cmp(&a.0.beam_rank))
        })
        .map(|(_, c)| c)
        .ok_or(DecodeError::EmptyCandidates)
}

/// Runs the configured method (and reranking) and returns the chosen
/// candidate. `render` turns caption IDs into text for reranking.
pub fn decode<M, F>(
    model: &M,
    config: &DecodeConfig,
    tweet_text: &str,
    render: F,
) -> Result<(Candidate, String), DecodeError>
where
    M: LanguageModel + ?Sized,
    F: Fn(&[u32]) -> String,
{
    let candidates = match config.method {
        Method::Greedy => vec![greedy(model, config)],
        Method::BeamSearch => beam_search(model, config),
    };
    let rendered: Vec<(Candidate, String)> = candidates
        .into_iter()
        .map(|c| {
            let text = render(c.caption_ids());
            (c, text)
        })
        .collect();
    let chosen = match config.rerank {
        Rerank::None => rendered.first().ok_or(DecodeError::EmptyCandidates)?,
        metric => rerank(&rendered, tweet_text, metric)?,
    };
    Ok(chosen.clone())
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tweet_id: String,
    pub image_id: String,
    pub caption: String,
    pub score: f64,
    pub beam_rank: usize,
}

const PRED_HEADER: &str = "tweet_id\timage_id\tcaption\tscore\tbeam_rank";

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

/// TSV with a header row; scores printed with six decimals.
pub fn write_predictions<W: Write>(mut w: W, preds: &[Prediction]) -> io::Result<()> {
    writeln!(w, "{PRED_HEADER}")?;
    for p in preds {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}\t{}",
            clean(&p.tweet_id),
            clean(&p.image_id),
            clean(&p.caption),
            p.score,
            p.beam_rank
        )?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<Prediction>, DecodeError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 && line == PRED_HEADER {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(DecodeError::BadPrediction(
                i + 1,
                format!("expected 5 columns, got {}", f.len()),
            ));
        }
        let score = f[3]
            .parse()
            .map_err(|e| DecodeError::BadPrediction(i + 1, format!("score: {e}")))?;
        let beam_rank = f[4]
            .parse()
            .map_err(|e| DecodeError::BadPrediction(i + 1, format!("beam_rank: {e}")))?;
        out.push(Prediction {
            tweet_id: f[0].to_string(),
            image_id: f[1].to_string(),
            caption: f[2].to_string(),
            score,
            beam_rank,
        });
    }
    Ok(out)
}
