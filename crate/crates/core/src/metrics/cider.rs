use std::collections::BTreeMap;

use super::{ngram_counts, EvalPair, MetricError};

/// Original CIDEr with document frequencies taken from the evaluation
/// references: for n = 1..4, term-frequency × IDF vectors with
/// `idf = ln N − ln max(1, df)`, cosine similarity ×10, averaged over n and
/// then over pairs.
pub fn cider(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    Ok(cider_per_pair(pairs)?.iter().sum::<f64>() / pairs.len() as f64)
}

pub fn cider_per_pair(pairs: &[EvalPair]) -> Result<Vec<f64>, MetricError> {
    if pairs.len() < 2 {
        return Err(MetricError::CorpusTooSmall(pairs.len()));
    }
    let log_n = (pairs.len() as f64).ln();
    let mut scores = vec![0.0; pairs.len()];
    for n in 1..=4 {
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for p in pairs {
            for gram in ngram_counts(&p.reference, n).into_keys() {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| log_n - (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        for (p, score) in pairs.iter().zip(scores.iter_mut()) {
            let cand = ngram_counts(&p.candidate, n);
            let refs = ngram_counts(&p.reference, n);
            let weigh = |counts: &BTreeMap<&[String], usize>| -> BTreeMap<Vec<String>, f64> {
                counts.iter().map(|(g, &c)| (g.to_vec(), c as f64 * idf(g))).collect()
            };
            let (vc, vr) = (weigh(&cand), weigh(&refs));
            let norm = |v: &BTreeMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let (nc, nr) = (norm(&vc), norm(&vr));
            if nc == 0.0 || nr == 0.0 {
                continue;
            }
            let dot: f64 = vc.iter().filter_map(|(g, x)| vr.get(g).map(|y| x * y)).sum();
            *score += 10.0 * dot / (nc * nr) / 4.0;
        }
    }
    Ok(scores)
}
