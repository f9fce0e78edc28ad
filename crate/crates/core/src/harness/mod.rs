//! Baselines, synthetic data and end-to-end experiment runs.

mod synth;

pub use synth::{alt_text, attribute_word, class_name, synth_dataset, SynthImage, SynthSpec};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::captioner::{read_checkpoint, CaptionerError, EncodedSample, ModelConfig, ModelState, Variant};
use crate::corpus::{read_samples, CorpusError, Sample};
use crate::decoding::{self, write_predictions, DecodeConfig, DecodeError, Method, Prediction};
use crate::dedup::DedupError;
use crate::metrics::{evaluate, write_report_tsv, MetricError, MetricReport, METEOR_NOTE};
use crate::raster::RasterError;
use crate::tokenizer::{TokenizerError, Vocab};
use crate::vision::{load_embeddings, nearest_neighbor, ImageEmbedding, VisionError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no embedding for image {0}")]
    MissingEmbedding(String),
    #[error("input {0} does not exist")]
    MissingInput(PathBuf),
    #[error("checkpoint holds a {found} model, run asked for {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("vocabulary has {vocab} entries but the model expects {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Captioner(#[from] CaptionerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Captioner(CaptionerError::InvalidConfig(_)) => 1,
            HarnessError::Captioner(CaptionerError::NonFiniteActivation | CaptionerError::DivergedLoss(_)) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Vocabulary over the tweet and alt-text words of `samples`.
pub fn build_vocab(samples: &[Sample], max_size: usize) -> Vocab {
    let texts: Vec<&str> = samples
        .iter()
        .flat_map(|s| [s.tweet_text.as_str(), s.alt_text.as_str()])
        .collect();
    Vocab::build(&texts, max_size)
}

/// Seeded permutation used by the random-tweet ablation: sample `i` is paired
/// with the tweet of sample `perm[i]`.
pub fn rand_text_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Tweet text each sample is conditioned on under `variant`.
pub fn conditioning_tweets(samples: &[Sample], variant: Variant, seed: u64) -> Vec<&str> {
    match variant {
        Variant::RandText => rand_text_permutation(samples.len(), seed)
            .into_iter()
            .map(|j| samples[j].tweet_text.as_str())
            .collect(),
        _ => samples.iter().map(|s| s.tweet_text.as_str()).collect(),
    }
}

fn encode_text(vocab: &Vocab, text: &str) -> Vec<u32> {
    let mut ids = vocab.encode(text, false);
    ids.truncate(ModelConfig::MAX_TEXT_TOKENS);
    ids
}

fn embedding_of<'a>(embeddings: &'a BTreeMap<String, ImageEmbedding>, image_id: &str) -> Result<&'a ImageEmbedding> {
    embeddings
        .get(image_id)
        .ok_or_else(|| HarnessError::MissingEmbedding(image_id.to_string()))
}

/// Turns curated samples into model inputs for `variant`.
pub fn encode_samples(
    samples: &[Sample],
    embeddings: &BTreeMap<String, ImageEmbedding>,
    vocab: &Vocab,
    variant: Variant,
    seed: u64,
) -> Result<Vec<EncodedSample>> {
    let tweets = conditioning_tweets(samples, variant, seed);
    samples
        .iter()
        .zip(tweets)
        .map(|(s, tweet)| {
            let e = embedding_of(embeddings, &s.image_id)?;
            Ok(EncodedSample::new(
                e.vec.clone(),
                encode_text(vocab, tweet),
                encode_text(vocab, &s.alt_text),
            ))
        })
        .collect()
}

/// Decodes one caption per sample.
pub fn generate(
    state: &ModelState,
    vocab: &Vocab,
    samples: &[Sample],
    embeddings: &BTreeMap<String, ImageEmbedding>,
    config: &DecodeConfig,
    seed: u64,
) -> Result<Vec<Prediction>> {
    if vocab.len() != state.config.vocab_size {
        return Err(HarnessError::VocabMismatch {
            vocab: vocab.len(),
            model: state.config.vocab_size,
        });
    }
    let tweets = conditioning_tweets(samples, state.config.variant, seed);
    let render = |ids: &[u32]| vocab.decode(ids).unwrap_or_default();
    samples
        .iter()
        .zip(tweets)
        .map(|(s, tweet)| {
            let e = embedding_of(embeddings, &s.image_id)?;
            let model = state.condition(&e.vec, &encode_text(vocab, tweet))?;
            let (cand, caption) = decoding::decode(&model, config, &s.tweet_text, render)?;
            Ok(Prediction {
                tweet_id: s.tweet_id.clone(),
                image_id: s.image_id.clone(),
                caption,
                score: cand.score,
                beam_rank: cand.beam_rank,
            })
        })
        .collect()
}

/// Fraction of predictions whose caption equals the reference alt-text after
/// lowercasing and whitespace normalization.
pub fn exact_match_rate(predictions: &[Prediction], references: &[Sample]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(MetricError::EmptyCorpus.into());
    }
    let refs: BTreeMap<(&str, &str), &str> = references.iter().map(|s| (s.key(), s.alt_text.as_str())).collect();
    let mut hits = 0usize;
    for p in predictions {
        let r = refs
            .get(&(p.tweet_id.as_str(), p.image_id.as_str()))
            .ok_or_else(|| MetricError::MissingReference(p.tweet_id.clone(), p.image_id.clone()))?;
        if crate::text::metric_tokens(&p.caption) == crate::text::metric_tokens(r) {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// Copies the alt-text of the most similar training image.
pub fn baseline_nearest_neighbor(
    test: &[Sample],
    train: &[Sample],
    embeddings: &BTreeMap<String, ImageEmbedding>,
) -> Result<Vec<Prediction>> {
    let mut index = Vec::with_capacity(train.len());
    let mut alt_of = BTreeMap::new();
    for s in train {
        // Duplicate images keep the first training sample's alt-text.
        if alt_of.contains_key(s.image_id.as_str()) {
            continue;
        }
        index.push(embedding_of(embeddings, &s.image_id)?.clone());
        alt_of.insert(s.image_id.as_str(), s.alt_text.as_str());
    }
    test.iter()
        .map(|s| {
            let q = embedding_of(embeddings, &s.image_id)?;
            let hit = nearest_neighbor(q, &index)?;
            Ok(Prediction {
                tweet_id: s.tweet_id.clone(),
                image_id: s.image_id.clone(),
                caption: alt_of[hit.image_id.as_str()].to_string(),
                score: q.dot(hit),
                beam_rank: 0,
            })
        })
        .collect()
}

/// Predicts the tweet text itself.
pub fn baseline_copy_tweet(test: &[Sample]) -> Vec<Prediction> {
    test.iter()
        .map(|s| Prediction {
            tweet_id: s.tweet_id.clone(),
            image_id: s.image_id.clone(),
            caption: s.tweet_text.clone(),
            score: 0.0,
            beam_rank: 0,
        })
        .collect()
}

/// Inputs and outputs of one generate-then-evaluate run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
    /// When set, the checkpoint's variant must match.
    pub variant: Option<Variant>,
    pub decode: DecodeConfig,
    pub seed: u64,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn decode_settings(d: &DecodeConfig) -> String {
    let method = match d.method {
        Method::Greedy => "greedy",
        Method::BeamSearch => "beam",
    };
    format!(
        "method={method}\nbeam_size={}\nblock_trigrams={}\nmax_len={}\nrerank={:?}\nlength_penalty={}\n",
        d.beam_size, d.block_trigrams, d.max_len, d.rerank, d.length_penalty
    )
}

impl RunConfig {
    /// SHA-256 over the run settings and the contents of every input, so
    /// equal hashes mean equal runs wherever the files live.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(decode_settings(&self.decode));
        h.update(format!(
            "variant={:?}\nseed={}\n",
            self.variant.map(Variant::code),
            self.seed
        ));
        for p in [&self.corpus, &self.embeddings, &self.checkpoint, &self.vocab] {
            h.update(file_digest(p)?);
            h.update("\n");
        }
        Ok(hex(&h.finalize()))
    }

    fn check_inputs(&self) -> Result<()> {
        for p in [&self.corpus, &self.embeddings, &self.checkpoint, &self.vocab] {
            if !p.exists() {
                return Err(HarnessError::MissingInput(p.clone()));
            }
        }
        Ok(())
    }
}

/// Generates captions for the corpus, writes them to `predictions`, scores
/// them against the corpus alt-texts and writes a one-row report whose header
/// records the config hash.
pub fn run_experiment(config: &RunConfig) -> Result<MetricReport> {
    config.check_inputs()?;
    let samples = read_samples(BufReader::new(File::open(&config.corpus)?))?;
    let embeddings = load_embeddings(BufReader::new(File::open(&config.embeddings)?))?;
    let state = read_checkpoint(BufReader::new(File::open(&config.checkpoint)?))?;
    let vocab = Vocab::read(BufReader::new(File::open(&config.vocab)?))?;
    if let Some(expected) = config.variant {
        if expected != state.config.variant {
            return Err(HarnessError::VariantMismatch {
                expected,
                found: state.config.variant,
            });
        }
    }
    let preds = generate(&state, &vocab, &samples, &embeddings, &config.decode, config.seed)?;
    let report = evaluate(&preds, &samples)?;

    let mut w = BufWriter::new(File::create(&config.predictions)?);
    write_predictions(&mut w, &preds)?;
    w.flush()?;

    let label = format!("{} {}", state.config.variant.name(), config.decode.label());
    let header = vec![format!("config_sha256: {}", config.hash()?), METEOR_NOTE.to_string()];
    let mut w = BufWriter::new(File::create(&config.report)?);
    write_report_tsv(&mut w, &[(label.as_str(), &report)], &header)?;
    w.flush()?;
    Ok(report)
}
