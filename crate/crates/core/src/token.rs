//! Token ids and vocabulary bookkeeping.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Vocabulary size plus the distinguished end-of-sequence and padding ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
    eos: TokenId,
    pad: TokenId,
}

impl Vocab {
    pub fn new(size: usize, eos: TokenId, pad: TokenId) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidDistribution(format!(
                "vocabulary needs at least 2 tokens, got {size}"
            )));
        }
        if eos == pad {
            return Err(Error::InvalidDistribution(format!(
                "eos and pad must differ (both {eos})"
            )));
        }
        let vocab = Vocab { size, eos, pad };
        vocab.check(eos)?;
        vocab.check(pad)?;
        Ok(vocab)
    }

    /// Vocabulary with `pad` chosen as the id following `eos`.
    pub fn with_eos(size: usize, eos: TokenId) -> Result<Self> {
        let pad = TokenId(((eos.index() + 1) % size.max(1)) as u32);
        Self::new(size, eos, pad)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn check(&self, id: TokenId) -> Result<TokenId> {
        if id.index() < self.size {
            Ok(id)
        } else {
            Err(Error::InvalidToken {
                id: id.0,
                vocab_size: self.size,
            })
        }
    }

    pub fn check_all(&self, ids: &[TokenId]) -> Result<()> {
        ids.iter().try_for_each(|&id| self.check(id).map(|_| ()))
    }
}

/// Parses whitespace-separated token ids.
pub(crate) fn parse_token_list(text: &str) -> std::result::Result<Vec<TokenId>, String> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map(TokenId)
                .map_err(|_| format!("`{t}` is not a token id"))
        })
        .collect()
}
