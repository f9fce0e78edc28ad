use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CaptionerError;
use crate::vision::EMBED_DIM;

/// Which conditioning signals reach the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Image prefix followed by the tweet text.
    #[serde(rename = "text_image")]
    TextAndImage,
    ImageOnly,
    TextOnly,
    /// Image prefix followed by an unrelated tweet supplied by the caller.
    RandText,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::TextAndImage,
        Variant::ImageOnly,
        Variant::TextOnly,
        Variant::RandText,
    ];

    pub fn uses_image(self) -> bool {
        !matches!(self, Variant::TextOnly)
    }

    pub fn uses_tweet(self) -> bool {
        !matches!(self, Variant::ImageOnly)
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::TextAndImage => 0,
            Variant::ImageOnly => 1,
            Variant::TextOnly => 2,
            Variant::RandText => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::TextAndImage => "text_image",
            Variant::ImageOnly => "image_only",
            Variant::TextOnly => "text_only",
            Variant::RandText => "rand_text",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Architecture of the mapping network and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Prefix length: rows produced by the mapping network.
    pub k: usize,
    pub d_enc: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub variant: Variant,
    /// Residual-branch dropout during training; 0 disables it.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 10,
            d_enc: EMBED_DIM,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 0,
            max_seq_len: 10 + 150 + 150 + 2,
            variant: Variant::TextAndImage,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Hidden width of the mapping MLP, the floor of the mean of its input and
    /// output widths.
    pub fn mapper_hidden(&self) -> usize {
        (self.d_enc + self.k * self.d_model) / 2
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Longest tweet/alt-text token count a sequence must hold.
    pub const MAX_TEXT_TOKENS: usize = 150;

    pub fn validate(&self) -> Result<(), CaptionerError> {
        let bad = |msg: String| Err(CaptionerError::InvalidConfig(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.d_enc == 0 || self.d_ff == 0 {
            return bad("d_enc and d_ff must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::N_SPECIALS {
            return bad(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        let needed = self.k + 2 * Self::MAX_TEXT_TOKENS + 2;
        if self.max_seq_len < needed {
            return bad(format!("max_seq_len {} is below k + 302 = {needed}", self.max_seq_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 3,
            max_epochs: 100,
            max_steps: None,
            seed: 0,
        }
    }
}

/// Model plus training settings as read from a TOML file with optional
/// `[model]` and `[train]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Upper bound on vocabulary size including the four specials.
    pub vocab_max: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CaptionerError> {
        toml::from_str(text).map_err(|e| CaptionerError::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
