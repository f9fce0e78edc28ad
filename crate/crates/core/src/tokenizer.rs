//! Word-level vocabulary with four reserved special tokens.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::text::metric_tokens;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const N_SPECIALS: usize = 4;
/// Rendering of [`UNK`] in decoded text.
pub const UNK_TEXT: &str = "⟨unk⟩";

const SPECIAL_NAMES: [&str; N_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("vocabulary file line {0}: {1}")]
    BadVocabFile(usize, String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_of: HashMap<String, u32>,
    token_of: Vec<String>,
}

impl Vocab {
    fn from_words(words: Vec<String>) -> Self {
        let mut token_of: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        token_of.extend(words);
        let id_of = token_of
            .iter()
            .enumerate()
            .skip(N_SPECIALS)
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { id_of, token_of }
    }

    /// Lowercased whitespace words ranked by frequency, ties broken
    /// lexicographically; the top `max_size - 4` are kept.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Self {
        assert!(max_size > N_SPECIALS, "max_size must be at least 5");
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in metric_tokens(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - N_SPECIALS);
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect())
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.token_of.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str, add_bos_eos: bool) -> Vec<u32> {
        let mut ids = Vec::new();
        if add_bos_eos {
            ids.push(BOS);
        }
        ids.extend(metric_tokens(text).iter().map(|t| self.id(t).unwrap_or(UNK)));
        if add_bos_eos {
            ids.push(EOS);
        }
        ids
    }

    /// Drops PAD/BOS/EOS, renders UNK as [`UNK_TEXT`], joins with spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => words.push(UNK_TEXT),
                _ => words.push(self.token(id).ok_or(TokenizerError::UnknownId(id))?),
            }
        }
        Ok(words.join(" "))
    }

    /// One non-special token per line; line `n` holds id `n + 4`.
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for tok in &self.token_of[N_SPECIALS..] {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, TokenizerError> {
        let mut words = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(TokenizerError::BadVocabFile(
                    i + 1,
                    "token must be one non-empty word".into(),
                ));
            }
            if !seen.insert(line.clone()) {
                return Err(TokenizerError::BadVocabFile(i + 1, format!("duplicate token {line:?}")));
            }
            words.push(line);
        }
        Ok(Self::from_words(words))
    }
}
