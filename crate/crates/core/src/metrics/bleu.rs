use super::{ngram_counts, EvalPair, MetricError};

/// Corpus BLEU with clipped n-gram precisions for n = 1..4 pooled over all
/// pairs, uniform geometric mean, and brevity penalty `exp(min(0, 1 - r/c))`.
/// Any zero pooled precision gives 0.
pub fn bleu4(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for p in pairs {
        c_len += p.candidate.len();
        r_len += p.reference.len();
        for n in 1..=4 {
            let cand = ngram_counts(&p.candidate, n);
            let refs = ngram_counts(&p.reference, n);
            for (gram, &count) in &cand {
                matched[n - 1] += count.min(refs.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let brevity = (1.0 - r_len as f64 / c_len as f64).min(0.0);
    Ok((log_precision + brevity).exp())
}

/// BLEU@4 of a single pair (a one-pair corpus).
pub fn sentence_bleu4(candidate: &[String], reference: &[String]) -> f64 {
    bleu4(&[EvalPair {
        candidate: candidate.to_vec(),
        reference: reference.to_vec(),
    }])
    .expect("one pair")
}
