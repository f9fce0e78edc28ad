//! Prefix captioner: an MLP maps the frozen image embedding to `k` rows in the
//! decoder's embedding space; those rows, the embedded tweet and the
//! alt-text are fed to a causal decoder trained with teacher-forced
//! cross-entropy on the alt-text positions only.

mod checkpoint;
mod config;
mod gradcheck;
mod model;
mod params;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{ExperimentConfig, ModelConfig, TrainConfig, Variant};
pub use gradcheck::{grad_check, GradCheck, DENOM_FLOOR};
pub use model::{log_softmax, loss, Matrix, ModelInput, Net, PrefixMatrix, RowSource};
pub use params::{BlockLayout, Layout};
pub use train::{dataset_nll, train, train_from, write_train_log, EpochLog, TrainOutcome};

use thiserror::Error;

use crate::decoding::LanguageModel;

#[derive(Debug, Error)]
pub enum CaptionerError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("expected an embedding of dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("variant needs an image prefix but none was given")]
    MissingPrefix,
    #[error("token id {0} outside the model vocabulary")]
    TokenOutOfRange(u32),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("training loss diverged at step {0}")]
    DivergedLoss(u64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training/evaluation example: the frozen image embedding and token IDs
/// (alt-text without BOS/EOS). `mask` overrides the default alt-text loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub embedding: Vec<f64>,
    pub tweet_ids: Vec<u32>,
    pub alt_ids: Vec<u32>,
    pub mask: Option<Vec<bool>>,
}

impl EncodedSample {
    pub fn new(embedding: Vec<f64>, tweet_ids: Vec<u32>, alt_ids: Vec<u32>) -> Self {
        Self {
            embedding,
            tweet_ids,
            alt_ids,
            mask: None,
        }
    }
}

/// Parameters, Adam moments and step counter. The image encoder is external
/// and never part of the state.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.config == other.config
            && self.step == other.step
            && bits(&self.params) == bits(&other.params)
            && bits(&self.adam_m) == bits(&other.adam_m)
            && bits(&self.adam_v) == bits(&other.adam_v)
    }
}

impl ModelState {
    /// Freshly initialized from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, CaptionerError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.init(config.seed);
        let n = params.len();
        Ok(Self {
            config,
            layout,
            params,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn net(&self) -> Net<'_> {
        Net {
            cfg: &self.config,
            layout: &self.layout,
            params: &self.params,
        }
    }

    pub fn map_prefix(&self, embedding: &[f64]) -> Result<PrefixMatrix, CaptionerError> {
        self.net().map_prefix(embedding)
    }

    pub fn build_input(
        &self,
        prefix: Option<&PrefixMatrix>,
        tweet_ids: &[u32],
        alt_ids: &[u32],
    ) -> Result<ModelInput, CaptionerError> {
        self.net().build_input(prefix, tweet_ids, alt_ids)
    }

    pub fn forward(&self, input: &ModelInput) -> Result<Matrix, CaptionerError> {
        self.net().forward(input)
    }

    /// Fixes the conditioning of one sample for decoding.
    pub fn condition(&self, embedding: &[f64], tweet_ids: &[u32]) -> Result<Conditioned<'_>, CaptionerError> {
        let prefix = if self.config.variant.uses_image() {
            Some(self.map_prefix(embedding)?)
        } else {
            None
        };
        let tweet_ids = if self.config.variant.uses_tweet() {
            tweet_ids.to_vec()
        } else {
            Vec::new()
        };
        Ok(Conditioned {
            net: self.net(),
            prefix,
            tweet_ids,
        })
    }
}

/// A model with its image prefix and tweet fixed, exposed to the decoders.
pub struct Conditioned<'a> {
    net: Net<'a>,
    prefix: Option<PrefixMatrix>,
    tweet_ids: Vec<u32>,
}

impl LanguageModel for Conditioned<'_> {
    fn vocab_size(&self) -> usize {
        self.net.cfg.vocab_size
    }

    fn next_logits(&self, generated: &[u32]) -> Vec<f64> {
        let input = self
            .net
            .build_input(self.prefix.as_ref(), &self.tweet_ids, generated)
            .expect("decoder keeps the sequence within max_seq_len");
        let trace = self
            .net
            .forward_trace::<rand_chacha::ChaCha8Rng>(&input.embedded.data, None);
        let d = self.net.cfg.d_model;
        self.net.logits_row(&trace.z[trace.z.len() - d..])
    }

    fn max_steps(&self) -> Option<usize> {
        let used = self.prefix.as_ref().map_or(0, |p| p.rows) + self.tweet_ids.len();
        Some(self.net.cfg.max_seq_len.saturating_sub(used))
    }
}
