//! Pre-tokenized prompt datasets: one prompt per line, whitespace-separated
//! token ids, `#` starts a comment, blank lines are skipped.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::token::{parse_token_list, TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDataset {
    pub name: String,
    pub prompts: Vec<Vec<TokenId>>,
}

impl PromptDataset {
    pub fn new(name: impl Into<String>, prompts: Vec<Vec<TokenId>>) -> Result<Self> {
        if let Some(i) = prompts.iter().position(|p| p.is_empty()) {
            return Err(Error::parse("prompt dataset", i + 1, "empty prompt"));
        }
        Ok(PromptDataset {
            name: name.into(),
            prompts,
        })
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut prompts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let prompt = parse_token_list(content).map_err(|m| Error::parse("prompt dataset", idx + 1, m))?;
            prompts.push(prompt);
        }
        Self::new(name, prompts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.prompts {
            let line: Vec<String> = p.iter().map(|t| t.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        self.prompts.iter().try_for_each(|p| vocab.check_all(p))
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Random prompts of length `1..=max_len` over ids `0..vocab.size()`,
    /// excluding eos.
    pub fn random(name: impl Into<String>, n: usize, max_len: usize, vocab: &Vocab, rng: &mut impl Rng) -> Self {
        let prompts = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=max_len.max(1));
                (0..len)
                    .map(|_| loop {
                        let t = TokenId(rng.gen_range(0..vocab.size() as u32));
                        if t != vocab.eos() {
                            break t;
                        }
                    })
                    .collect()
            })
            .collect();
        PromptDataset {
            name: name.into(),
            prompts,
        }
    }
}

/// Yields prompt indices epoch by epoch, reshuffling at each epoch boundary
/// when `shuffle` is set.
#[derive(Debug, Clone)]
pub struct PromptSchedule {
    order: Vec<usize>,
    cursor: usize,
    shuffle: bool,
}

impl PromptSchedule {
    pub fn new(len: usize, shuffle: bool) -> Self {
        PromptSchedule {
            order: (0..len).collect(),
            cursor: len,
            shuffle,
        }
    }

    pub fn next_index(&mut self, rng: &mut impl Rng) -> usize {
        if self.cursor >= self.order.len() {
            if self.shuffle {
                self.order.shuffle(rng);
            }
            self.cursor = 0;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        i
    }
}
