//! Context-conditioned alt-text generation.
//!
//! The pipeline curates tweet/image/alt-text records ([`corpus`], [`dedup`]),
//! embeds images with a frozen encoder ([`vision`]), trains a prefix
//! captioner conditioned on both the image and the tweet ([`captioner`]),
//! decodes with beam search, trigram blocking and reranking ([`decoding`]),
//! and scores captions with BLEU@4, METEOR, ROUGE-L and CIDEr ([`metrics`]).
//! [`harness`] ties the stages together and provides baselines and a
//! synthetic dataset.

pub mod captioner;
pub mod corpus;
pub mod decoding;
pub mod dedup;
pub mod harness;
pub mod metrics;
pub mod raster;
pub mod text;
pub mod tokenizer;
pub mod vision;

pub use captioner::{EncodedSample, ModelConfig, ModelState, TrainConfig, Variant};
pub use corpus::{RawRecord, Sample};
pub use decoding::{Candidate, DecodeConfig, Prediction};
pub use metrics::MetricReport;
pub use raster::Raster;
pub use tokenizer::Vocab;
pub use vision::ImageEmbedding;
