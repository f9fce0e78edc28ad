use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use super::{bleu4, cider, meteor, rouge_l, EvalPair, MetricError, DEFAULT_BETA};
use crate::corpus::Sample;
use crate::decoding::Prediction;

/// Stated in every report so readers do not compare against stemmed/synonym METEOR.
pub const METEOR_NOTE: &str = "METEOR: exact-match unigram alignment only (no stemming or synonyms)";

/// Raw corpus scores. BLEU, METEOR and ROUGE-L lie in [0, 1]; CIDEr in [0, 10].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

fn display(raw: f64) -> f64 {
    (raw * 100.0 * 1000.0).round() / 1000.0
}

impl MetricReport {
    /// Scores ×100 rounded to three decimals, in column order
    /// BLEU@4, METEOR, ROUGE-L, CIDEr.
    pub fn display_values(&self) -> [f64; 4] {
        [
            display(self.bleu4),
            display(self.meteor),
            display(self.rouge_l),
            display(self.cider),
        ]
    }

    pub fn from_pairs(pairs: &[EvalPair]) -> Result<Self, MetricError> {
        if pairs.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let n = pairs.len() as f64;
        Ok(Self {
            bleu4: bleu4(pairs)?,
            meteor: pairs.iter().map(|p| meteor(&p.candidate, &p.reference)).sum::<f64>() / n,
            rouge_l: pairs
                .iter()
                .map(|p| rouge_l(&p.candidate, &p.reference, DEFAULT_BETA))
                .sum::<f64>()
                / n,
            cider: cider(pairs)?,
        })
    }
}

/// Writes `# `-prefixed header lines, then one TSV row per named report.
pub fn write_report_tsv<W: Write>(mut w: W, rows: &[(&str, &MetricReport)], header: &[String]) -> io::Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "system\tBLEU@4\tMETEOR\tROUGE-L\tCIDEr")?;
    for (name, r) in rows {
        let [b, m, l, c] = r.display_values();
        writeln!(w, "{name}\t{b:.3}\t{m:.3}\t{l:.3}\t{c:.3}")?;
    }
    Ok(())
}

/// Aligned plain-text table of named report rows.
pub struct Table<'a>(pub &'a [(&'a str, &'a MetricReport)]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.0.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
            "system", "BLEU@4", "METEOR", "ROUGE-L", "CIDEr"
        )?;
        for (name, r) in self.0 {
            let [b, m, l, c] = r.display_values();
            writeln!(f, "{name:<width$}  {b:>8.3}  {m:>8.3}  {l:>8.3}  {c:>8.3}")?;
        }
        Ok(())
    }
}

/// Scores predictions against the alt-texts of `references`, matched by
/// `(tweet_id, image_id)`.
pub fn evaluate(predictions: &[Prediction], references: &[Sample]) -> Result<MetricReport, MetricError> {
    let refs: HashMap<(&str, &str), &str> = references
        .iter()
        .map(|s| ((s.tweet_id.as_str(), s.image_id.as_str()), s.alt_text.as_str()))
        .collect();
    let pairs = predictions
        .iter()
        .map(|p| {
            refs.get(&(p.tweet_id.as_str(), p.image_id.as_str()))
                .map(|r| EvalPair::new(&p.caption, r))
                .ok_or_else(|| MetricError::MissingReference(p.tweet_id.clone(), p.image_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    MetricReport::from_pairs(&pairs)
}
