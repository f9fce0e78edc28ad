//! Tweet/image/alt-text records: parsing, curation rules, redaction, cropping
//! and tweet-grouped splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_ws, token_count, tokens};

pub const DEFAULT_MAX_TOKENS: usize = 150;
pub const REDACTION: &str = "person";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("span ({start}, {end}) out of bounds for text of {len} bytes")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("spans overlap or are unsorted at ({start}, {end})")]
    OverlappingSpans { start: usize, end: usize },
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One image attached to a raw tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawImage {
    pub image_id: String,
    #[serde(rename = "path")]
    pub path_or_url: String,
    pub alt_text: String,
    #[serde(default)]
    pub person_spans: Vec<(usize, usize)>,
}

/// A pre-fetched tweet with its images, as read from the ingest JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub tweet_id: String,
    pub created_at: i64,
    #[serde(rename = "text")]
    pub tweet_text: String,
    pub images: Vec<RawImage>,
}

impl RawRecord {
    fn validate(&self) -> Result<(), String> {
        if self.tweet_id.is_empty() {
            return Err("empty tweet_id".into());
        }
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(format!("duplicate image_id {:?}", img.image_id));
            }
            for &(start, end) in &img.person_spans {
                if start >= end || end > img.alt_text.len() {
                    return Err(format!("image {:?}: bad person span ({start}, {end})", img.image_id));
                }
            }
        }
        Ok(())
    }
}

/// A curated (image, tweet text, alt-text) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub tweet_id: String,
    pub image_id: String,
    pub created_at: i64,
    pub tweet_text: String,
    pub alt_text: String,
    /// Image location carried through from the raw record.
    pub path: String,
}

impl Sample {
    pub fn key(&self) -> (&str, &str) {
        (&self.tweet_id, &self.image_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Result of [`parse_records`]: every well-formed record plus per-line failures.
#[derive(Debug, Default)]
pub struct Parsed {
    pub records: Vec<RawRecord>,
    pub errors: Vec<CorpusError>,
}

/// Reads line-delimited JSON records. Malformed lines are collected, not
/// fatal; blank lines are skipped. A read failure aborts.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Parsed, CorpusError> {
    let mut parsed = Parsed::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<RawRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r));
        match record {
            Ok(r) => parsed.records.push(r),
            Err(reason) => parsed.errors.push(CorpusError::MalformedRecord { line_no, reason }),
        }
    }
    Ok(parsed)
}

pub fn write_records<W: Write>(mut w: W, records: &[RawRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Groups samples back into records (one per tweet, in first-seen order) so a
/// curated corpus is stored in the same schema as the raw input.
pub fn samples_to_records(samples: &[Sample]) -> Vec<RawRecord> {
    let mut order: Vec<RawRecord> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        let slot = *index.entry(&s.tweet_id).or_insert_with(|| {
            order.push(RawRecord {
                tweet_id: s.tweet_id.clone(),
                created_at: s.created_at,
                tweet_text: s.tweet_text.clone(),
                images: Vec::new(),
            });
            order.len() - 1
        });
        order[slot].images.push(RawImage {
            image_id: s.image_id.clone(),
            path_or_url: s.path.clone(),
            alt_text: s.alt_text.clone(),
            person_spans: Vec::new(),
        });
    }
    order
}

/// Flattens already-curated records into samples without re-filtering.
pub fn records_to_samples(records: &[RawRecord]) -> Vec<Sample> {
    records
        .iter()
        .flat_map(|r| {
            r.images.iter().map(move |img| Sample {
                tweet_id: r.tweet_id.clone(),
                image_id: img.image_id.clone(),
                created_at: r.created_at,
                tweet_text: r.tweet_text.clone(),
                alt_text: img.alt_text.clone(),
                path: img.path_or_url.clone(),
            })
        })
        .collect()
}

/// Reads a curated corpus file, failing on the first malformed line.
pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<Sample>, CorpusError> {
    let mut parsed = parse_records(reader)?;
    if !parsed.errors.is_empty() {
        return Err(parsed.errors.swap_remove(0));
    }
    Ok(records_to_samples(&parsed.records))
}

pub fn write_samples<W: Write>(w: W, samples: &[Sample]) -> io::Result<()> {
    write_records(w, &samples_to_records(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    IdenticalToTweet,
    Placeholder,
    ContainsUrl,
    ContainsHandle,
    ContainsHashtag,
    TooShort,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::IdenticalToTweet => "IdenticalToTweet",
            RejectReason::Placeholder => "Placeholder",
            RejectReason::ContainsUrl => "ContainsUrl",
            RejectReason::ContainsHandle => "ContainsHandle",
            RejectReason::ContainsHashtag => "ContainsHashtag",
            RejectReason::TooShort => "TooShort",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    Accept(Sample),
    Reject(RejectReason),
}

/// Curation rule parameters.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Leading phrases removed from alt-text, matched case-insensitively on
    /// whole tokens. Longer phrases are tried first.
    pub strip_phrases: Vec<String>,
    /// Whole alt-texts (lowercased, trailing punctuation removed) treated as
    /// placeholders.
    pub placeholders: Vec<String>,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let strip = ["image of", "photo of", "picture of", "a photo of", "an image of"];
        let placeholders = [
            "",
            "image",
            "photo",
            "picture",
            "img",
            "pic",
            "screenshot",
            "alt text",
            "alt",
            "no alt text",
            "graphic",
        ];
        Self {
            strip_phrases: strip.iter().map(|s| s.to_string()).collect(),
            placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
            min_tokens: 4,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl FilterConfig {
    /// Removes leading strip-list phrases. Repeats until none applies so that
    /// filtering an accepted sample again is a no-op.
    pub fn strip_leading(&self, text: &str) -> String {
        let mut phrases: Vec<Vec<String>> = self
            .strip_phrases
            .iter()
            .map(|p| tokens(p).map(str::to_lowercase).collect())
            .filter(|p: &Vec<String>| !p.is_empty())
            .collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));

        let mut toks: Vec<&str> = tokens(text).collect();
        'outer: loop {
            for phrase in &phrases {
                if toks.len() >= phrase.len() && toks.iter().zip(phrase).all(|(t, p)| t.to_lowercase() == *p) {
                    toks.drain(..phrase.len());
                    continue 'outer;
                }
            }
            break;
        }
        toks.join(" ")
    }

    fn is_placeholder(&self, alt: &str) -> bool {
        let key = alt
            .to_lowercase()
            .trim_end_matches(|c: char| c.is_ascii_punctuation())
            .trim()
            .to_string();
        let key = normalize_ws(&key);
        self.placeholders.iter().any(|p| normalize_ws(p) == key)
    }
}

/// Whitespace-normalized, lowercased comparison form.
fn comparable(text: &str) -> String {
    normalize_ws(&text.to_lowercase())
}

/// Returns the first `max_tokens` whitespace tokens joined by single spaces.
pub fn crop_tokens(text: &str, max_tokens: usize) -> String {
    assert!(max_tokens >= 1, "max_tokens must be at least 1");
    tokens(text).take(max_tokens).collect::<Vec<_>>().join(" ")
}

/// Replaces each byte span with the literal `"person"`.
///
/// Spans must be sorted ascending, non-overlapping and fall on character
/// boundaries of `text`.
pub fn redact_person_names(text: &str, spans: &[(usize, usize)]) -> Result<String, CorpusError> {
    let len = text.len();
    let mut prev_end = 0;
    for &(start, end) in spans {
        if start >= end || end > len || !text.is_char_boundary(start) || !text.is_char_boundary(end) {
            return Err(CorpusError::SpanOutOfBounds { start, end, len });
        }
        if start < prev_end {
            return Err(CorpusError::OverlappingSpans { start, end });
        }
        prev_end = end;
    }
    let mut out = text.to_string();
    // Right-to-left keeps the earlier offsets valid.
    for &(start, end) in spans.iter().rev() {
        out.replace_range(start..end, REDACTION);
    }
    Ok(out)
}

/// Applies redaction, leading-phrase stripping and the curation rules to one
/// image of a record. Rules are checked in the order of [`RejectReason`].
///
/// # Panics
///
/// If `image_index` is out of range.
pub fn filter_sample(raw: &RawRecord, image_index: usize, config: &FilterConfig) -> FilterOutcome {
    let image = &raw.images[image_index];
    let alt = match redact_person_names(&image.alt_text, &image.person_spans) {
        Ok(a) => a,
        // Spans are validated at parse time; a record built by hand with bad
        // spans keeps its text unredacted.
        Err(_) => image.alt_text.clone(),
    };
    let alt = config.strip_leading(&alt);
    let alt_cropped = crop_tokens_or_empty(&alt, config.max_tokens);
    let tweet_cropped = crop_tokens_or_empty(&raw.tweet_text, config.max_tokens);

    if comparable(&alt_cropped) == comparable(&tweet_cropped) {
        return FilterOutcome::Reject(RejectReason::IdenticalToTweet);
    }
    if config.is_placeholder(&alt) {
        return FilterOutcome::Reject(RejectReason::Placeholder);
    }
    let toks: Vec<&str> = tokens(&alt).collect();
    if toks.iter().any(|t| {
        let t = t.to_ascii_lowercase();
        t.starts_with("http://") || t.starts_with("https://")
    }) {
        return FilterOutcome::Reject(RejectReason::ContainsUrl);
    }
    if toks.iter().any(|t| t.starts_with('@')) {
        return FilterOutcome::Reject(RejectReason::ContainsHandle);
    }
    if toks.iter().any(|t| t.starts_with('#')) {
        return FilterOutcome::Reject(RejectReason::ContainsHashtag);
    }
    if token_count(&alt) < config.min_tokens {
        return FilterOutcome::Reject(RejectReason::TooShort);
    }
    FilterOutcome::Accept(Sample {
        tweet_id: raw.tweet_id.clone(),
        image_id: image.image_id.clone(),
        created_at: raw.created_at,
        tweet_text: tweet_cropped,
        alt_text: alt_cropped,
        path: image.path_or_url.clone(),
    })
}

fn crop_tokens_or_empty(text: &str, max_tokens: usize) -> String {
    crop_tokens(text, max_tokens.max(1))
}

/// One row of the reject log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub tweet_id: String,
    pub image_id: String,
    pub reason: RejectReason,
}

/// Runs [`filter_sample`] over every image of every record.
pub fn curate(records: &[RawRecord], config: &FilterConfig) -> (Vec<Sample>, Vec<Rejection>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for r in records {
        for (i, img) in r.images.iter().enumerate() {
            match filter_sample(r, i, config) {
                FilterOutcome::Accept(s) => accepted.push(s),
                FilterOutcome::Reject(reason) => rejected.push(Rejection {
                    tweet_id: r.tweet_id.clone(),
                    image_id: img.image_id.clone(),
                    reason,
                }),
            }
        }
    }
    (accepted, rejected)
}

pub fn write_rejects<W: Write>(mut w: W, rejects: &[Rejection]) -> io::Result<()> {
    writeln!(w, "tweet_id\timage_id\treason")?;
    for r in rejects {
        writeln!(w, "{}\t{}\t{}", r.tweet_id, r.image_id, r.reason)?;
    }
    Ok(())
}

/// Ratios of the published split counts (330,449 / 20,561 / 20,260).
pub const DEFAULT_RATIOS: [f64; 3] = [0.89, 0.055, 0.055];

/// Partitions samples into train/val/test by tweet ID. Distinct IDs are
/// sorted, shuffled with a seeded ChaCha8 generator and cut by `ratios`
/// (rounded to whole tweets); samples keep their input order within a split.
pub fn split_corpus(samples: &[Sample], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit, CorpusError> {
    if ratios.iter().any(|&r| r.is_nan() || r <= 0.0) || ((ratios.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    if samples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.tweet_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);

    let mut which: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let part = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        which.insert(id, part);
    }
    let mut split = CorpusSplit::default();
    for s in samples {
        match which[s.tweet_id.as_str()] {
            0 => split.train.push(s.clone()),
            1 => split.val.push(s.clone()),
            _ => split.test.push(s.clone()),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(text: &str, alt: &str) -> RawRecord {
        RawRecord {
            tweet_id: "t1".into(),
            created_at: 100,
            tweet_text: text.into(),
            images: vec![RawImage {
                image_id: "i1".into(),
                path_or_url: "i1.png".into(),
                alt_text: alt.into(),
                person_spans: vec![],
            }],
        }
    }

    fn outcome(alt: &str) -> FilterOutcome {
        filter_sample(&record("some tweet text here", alt), 0, &FilterConfig::default())
    }

    #[test]
    fn parse_empty_stream() {
        let p = parse_records("".as_bytes()).unwrap();
        assert!(p.records.is_empty() && p.errors.is_empty());
    }

    #[test]
    fn parse_one_line() {
        let line = r#"{"tweet_id":"42","created_at":7,"text":"hi there","images":[{"image_id":"a","path":"a.png","alt_text":"a dog","person_spans":[[0,1]]}]}"#;
        let p = parse_records(line.as_bytes()).unwrap();
        assert!(p.errors.is_empty());
        let r = &p.records[0];
        assert_eq!(r.tweet_id, "42");
        assert_eq!(r.created_at, 7);
        assert_eq!(r.tweet_text, "hi there");
        assert_eq!(r.images[0].path_or_url, "a.png");
        assert_eq!(r.images[0].person_spans, vec![(0, 1)]);
    }

    #[test]
    fn parse_collects_bad_lines() {
        let good = r#"{"tweet_id":"1","created_at":1,"text":"x","images":[]}"#;
        let no_alt = r#"{"tweet_id":"2","created_at":1,"text":"x","images":[{"image_id":"a","path":"p"}]}"#;
        let no_time = r#"{"tweet_id":"3","text":"x","images":[]}"#;
        let input = format!("{good}\n{no_alt}\n{good}\n{no_time}\n");
        let p = parse_records(input.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.errors.len(), 2);
        assert!(matches!(p.errors[0], CorpusError::MalformedRecord { line_no: 2, .. }));
        assert!(matches!(p.errors[1], CorpusError::MalformedRecord { line_no: 4, .. }));
    }

    #[test]
    fn parse_rejects_invalid_spans_and_duplicate_ids() {
        let bad_span = r#"{"tweet_id":"1","created_at":1,"text":"x","images":[{"image_id":"a","path":"p","alt_text":"abc","person_spans":[[2,9]]}]}"#;
        let dup = r#"{"tweet_id":"1","created_at":1,"text":"x","images":[{"image_id":"a","path":"p","alt_text":"abc"},{"image_id":"a","path":"q","alt_text":"abc"}]}"#;
        let empty_id = r#"{"tweet_id":"","created_at":1,"text":"x","images":[]}"#;
        let p = parse_records(format!("{bad_span}\n{dup}\n{empty_id}").as_bytes()).unwrap();
        assert_eq!(p.records.len(), 0);
        assert_eq!(p.errors.len(), 3);
    }

    #[test]
    fn placeholder_rejected() {
        assert_eq!(outcome("Image"), FilterOutcome::Reject(RejectReason::Placeholder));
        assert_eq!(outcome("photo."), FilterOutcome::Reject(RejectReason::Placeholder));
    }

    #[test]
    fn leading_phrase_stripped() {
        match outcome("Photo of a red barn at sunset") {
            FilterOutcome::Accept(s) => assert_eq!(s.alt_text, "a red barn at sunset"),
            other => panic!("{other:?}"),
        }
        match outcome("a photo of my cat on the sofa") {
            FilterOutcome::Accept(s) => assert_eq!(s.alt_text, "my cat on the sofa"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_short_rejected() {
        assert_eq!(outcome("two cute dogs"), FilterOutcome::Reject(RejectReason::TooShort));
    }

    #[test]
    fn url_handle_hashtag_rejected() {
        assert_eq!(
            outcome("see https://x.co/abc for details here"),
            FilterOutcome::Reject(RejectReason::ContainsUrl)
        );
        assert_eq!(
            outcome("selfie with @friend at the beach"),
            FilterOutcome::Reject(RejectReason::ContainsHandle)
        );
        assert_eq!(
            outcome("sunset over the lake #nofilter"),
            FilterOutcome::Reject(RejectReason::ContainsHashtag)
        );
        // Not a scheme prefix: kept.
        assert!(matches!(
            outcome("visit example.com for more pictures"),
            FilterOutcome::Accept(_)
        ));
    }

    #[test]
    fn identical_to_tweet_rejected() {
        let r = record("A  Dog on the Beach", "a dog on the beach");
        assert_eq!(
            filter_sample(&r, 0, &FilterConfig::default()),
            FilterOutcome::Reject(RejectReason::IdenticalToTweet)
        );
    }

    #[test]
    fn first_failing_rule_wins() {
        // Contains a URL and is too short: URL is checked first.
        assert_eq!(
            outcome("https://a.b c"),
            FilterOutcome::Reject(RejectReason::ContainsUrl)
        );
        assert_eq!(
            outcome("@x #y z w"),
            FilterOutcome::Reject(RejectReason::ContainsHandle)
        );
    }

    #[test]
    fn redaction_examples() {
        assert_eq!(
            redact_person_names("Alice smiles at the camera", &[(0, 5)]).unwrap(),
            "person smiles at the camera"
        );
        assert_eq!(redact_person_names("unchanged text", &[]).unwrap(), "unchanged text");
        assert_eq!(
            redact_person_names("met Bob and Carol today", &[(4, 7), (12, 17)]).unwrap(),
            "met person and person today"
        );
    }

    #[test]
    fn redaction_errors() {
        assert!(matches!(
            redact_person_names("abc", &[(1, 9)]),
            Err(CorpusError::SpanOutOfBounds { .. })
        ));
        assert!(matches!(
            redact_person_names("abcdef", &[(0, 3), (2, 4)]),
            Err(CorpusError::OverlappingSpans { .. })
        ));
    }

    #[test]
    fn redaction_applied_before_filtering() {
        let mut r = record("tweet", "Bob walking his dog outside");
        r.images[0].person_spans = vec![(0, 3)];
        match filter_sample(&r, 0, &FilterConfig::default()) {
            FilterOutcome::Accept(s) => assert_eq!(s.alt_text, "person walking his dog outside"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn crop_examples() {
        let t150 = vec!["w"; 150].join(" ");
        assert_eq!(crop_tokens(&t150, 150), t150);
        let t151 = vec!["w"; 151].join(" ");
        assert_eq!(crop_tokens(&t151, 150), t150);
        assert_eq!(crop_tokens("a  b   c", 150), "a b c");
    }

    fn samples_with_ids(ids: &[&str]) -> Vec<Sample> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| Sample {
                tweet_id: id.to_string(),
                image_id: format!("img{i}"),
                created_at: i as i64,
                tweet_text: "t".into(),
                alt_text: format!("alt {i}"),
                path: String::new(),
            })
            .collect()
    }

    #[test]
    fn split_keeps_tweet_together() {
        let s = samples_with_ids(&["same"; 10]);
        let split = split_corpus(&s, [0.8, 0.1, 0.1], 3).unwrap();
        let sizes = [split.train.len(), split.val.len(), split.test.len()];
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert!(sizes.contains(&10));
    }

    #[test]
    fn split_exact_sizes_and_determinism() {
        let ids: Vec<String> = (0..1000).map(|i| format!("t{i:04}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let s = samples_with_ids(&refs);
        let a = split_corpus(&s, [0.8, 0.1, 0.1], 11).unwrap();
        let b = split_corpus(&s, [0.8, 0.1, 0.1], 11).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (800, 100, 100));
        assert_eq!(a, b);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_corpus(&[], [0.8, 0.1, 0.1], 0),
            Err(CorpusError::EmptyCorpus)
        ));
        let s = samples_with_ids(&["a"]);
        assert!(matches!(
            split_corpus(&s, [0.8, 0.1, 0.2], 0),
            Err(CorpusError::BadRatios(_))
        ));
        assert!(matches!(
            split_corpus(&s, [1.0, 0.0, 0.0], 0),
            Err(CorpusError::BadRatios(_))
        ));
    }
}
