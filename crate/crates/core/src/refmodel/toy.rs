use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use super::{FeatureQuery, ReferenceModel};
use crate::config::ToyFeatures;
use crate::error::{Error, Result};
use crate::token::{TokenId, Vocab};

const ROW_TOLERANCE: f64 = 1e-9;

/// Deterministic bigram language model over a small vocabulary.
///
/// File format: a header line `<vocab_size> <eos> [pad]` followed by
/// `vocab_size + 1` rows of `vocab_size` decimal probabilities. Row 0 is the
/// distribution for an empty context, row `t + 1` follows token `t`.
#[derive(Debug, Clone)]
pub struct ToyBigramModel {
    vocab: Vocab,
    // (vocab_size + 1) x vocab_size, row 0 = initial distribution.
    rows: Arc<[f64]>,
    encoding: ToyFeatures,
}

impl ToyBigramModel {
    pub fn new(vocab: Vocab, initial: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let v = vocab.size();
        if transitions.len() != v {
            return Err(Error::InvalidDistribution(format!(
                "expected {v} transition rows, got {}",
                transitions.len()
            )));
        }
        let mut rows = Vec::with_capacity((v + 1) * v);
        for (i, row) in std::iter::once(&initial).chain(&transitions).enumerate() {
            check_row(row, v).map_err(|m| Error::InvalidDistribution(format!("row {i}: {m}")))?;
            rows.extend_from_slice(row);
        }
        Ok(ToyBigramModel {
            vocab,
            rows: rows.into(),
            encoding: ToyFeatures::Bigram,
        })
    }

    pub fn with_features(mut self, encoding: ToyFeatures) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn features(&self) -> ToyFeatures {
        self.encoding
    }

    pub fn uniform(vocab: Vocab) -> Self {
        let v = vocab.size();
        let row = vec![1.0 / v as f64; v];
        Self::new(vocab, row.clone(), vec![row; v]).expect("uniform rows are valid")
    }

    /// Random peaked rows: each row is a normalized vector of
    /// `u^sharpness` draws, so larger `sharpness` concentrates mass.
    pub fn random(vocab: Vocab, sharpness: f64, rng: &mut impl Rng) -> Self {
        let v = vocab.size();
        let mut draw = || {
            let w: Vec<f64> = (0..v).map(|_| rng.gen::<f64>().powf(sharpness) + 1e-6).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let initial = draw();
        let transitions = (0..v).map(|_| draw()).collect();
        Self::new(vocab, initial, transitions).expect("normalized rows are valid")
    }

    /// Distribution after token `prev`, or the initial row for `None`.
    pub fn row(&self, prev: Option<TokenId>) -> &[f64] {
        let v = self.vocab.size();
        let r = prev.map_or(0, |t| t.index() + 1);
        &self.rows[r * v..(r + 1) * v]
    }

    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "toy model";
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::parse(WHAT, hline, "header must be `<vocab_size> <eos> [pad]`"));
        }
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::parse(WHAT, hline, format!("`{s}` is not an integer")))
        };
        let size = num(fields[0])? as usize;
        if size > 1 << 16 {
            return Err(Error::parse(WHAT, hline, "vocabulary too large for a toy model"));
        }
        let eos = TokenId(num(fields[1])?);
        let vocab = match fields.get(2) {
            Some(p) => Vocab::new(size, eos, TokenId(num(p)?)),
            None => Vocab::with_eos(size, eos),
        }
        .map_err(|e| Error::parse(WHAT, hline, e.to_string()))?;

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(size + 1);
        for (line, content) in lines {
            if rows.len() == size + 1 {
                return Err(Error::parse(WHAT, line, "too many rows"));
            }
            let row = content
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(WHAT, line, format!("`{t}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            check_row(&row, size).map_err(|m| Error::parse(WHAT, line, m))?;
            rows.push(row);
        }
        if rows.len() != size + 1 {
            return Err(Error::parse(
                WHAT,
                text.lines().count(),
                format!("expected {} rows, found {}", size + 1, rows.len()),
            ));
        }
        let initial = rows.remove(0);
        Self::new(vocab, initial, rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let v = self.vocab.size();
        let mut out = format!("{} {} {}\n", v, self.vocab.eos(), self.vocab.pad());
        for row in self.rows.chunks(v) {
            let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

fn check_row(row: &[f64], v: usize) -> std::result::Result<(), String> {
    if row.len() != v {
        return Err(format!("expected {v} entries, got {}", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return Err(format!("invalid probability {p}"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("row sums to {s}"));
    }
    Ok(())
}

impl ReferenceModel for ToyBigramModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn feature_dim(&self) -> usize {
        match self.encoding {
            ToyFeatures::Bigram => 2 * self.vocab.size() + 3,
            ToyFeatures::ResponseCounts => 3 * self.vocab.size() + 3,
        }
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_all(context)?;
        Ok(self.row(context.last().copied()).to_vec())
    }

    fn context_features(&self, context: &[TokenId], q: &FeatureQuery) -> Result<Vec<f64>> {
        let v = self.vocab.size();
        self.vocab.check_all(context)?;
        self.vocab.check(q.candidate)?;
        let mut f = vec![0.0; self.feature_dim()];
        if let Some(last) = context.last() {
            f[last.index()] = 1.0;
        }
        f[v + q.candidate.index()] = 1.0;
        let h = q.max_len.max(1) as f64;
        f[2 * v] = q.position as f64 / h;
        f[2 * v + 1] = q.rank as f64 / q.set_size.max(1) as f64;
        f[2 * v + 2] = q.ref_prob;
        if self.encoding == ToyFeatures::ResponseCounts {
            if q.position > context.len() {
                return Err(Error::DimensionMismatch {
                    expected: context.len(),
                    found: q.position,
                });
            }
            for t in &context[context.len() - q.position..] {
                f[2 * v + 3 + t.index()] += 1.0 / h;
            }
        }
        Ok(f)
    }

    fn fork(&self) -> Result<Box<dyn ReferenceModel>> {
        Ok(Box::new(self.clone()))
    }
}
