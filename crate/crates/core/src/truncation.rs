//! Hybrid top-k / top-p candidate truncation.
//!
//! The candidate set at a position is the longest probability-descending
//! prefix allowed by both caps: at most `top_k` tokens, and no more than the
//! shortest prefix whose cumulative mass reaches `top_p` (inclusive).
//! Equal probabilities are ordered by ascending token id.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::token::TokenId;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub token: TokenId,
    pub ref_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    entries: Vec<Candidate>,
    position: usize,
}

impl CandidateSet {
    /// Builds a set from already-sorted entries, checking the ordering
    /// invariants.
    pub fn from_sorted(entries: Vec<Candidate>, position: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        for c in &entries {
            if !(c.ref_prob > 0.0 && c.ref_prob.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "candidate {} has probability {}",
                    c.token, c.ref_prob
                )));
            }
        }
        if entries.windows(2).any(|w| order(&w[0], &w[1]) != Ordering::Less) {
            return Err(Error::InvalidDistribution(
                "candidates are not sorted by descending probability".into(),
            ));
        }
        Ok(CandidateSet { entries, position })
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Generation index this set was built for.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Candidate at 1-based `rank`.
    pub fn at_rank(&self, rank: usize) -> Option<&Candidate> {
        rank.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.entries.iter().map(|c| c.token).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|c| c.ref_prob).collect()
    }
}

fn order(a: &Candidate, b: &Candidate) -> Ordering {
    b.ref_prob
        .partial_cmp(&a.ref_prob)
        .unwrap_or(Ordering::Equal)
        .then(a.token.cmp(&b.token))
}

fn check_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".into()));
    }
    let mut sum = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        if p.is_nan() {
            return Err(Error::InvalidDistribution(format!("entry {i} is NaN")));
        }
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        sum += p;
    }
    if sum == 0.0 {
        return Err(Error::InvalidDistribution("all entries are zero".into()));
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}, not 1")));
    }
    Ok(())
}

/// Truncates a full-vocabulary distribution to the sorted candidate set.
pub fn truncate_and_sort(dist: &[f64], top_k: usize, top_p: f64, position: usize) -> Result<CandidateSet> {
    check_distribution(dist)?;
    let mut pool: Vec<Candidate> = dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| Candidate {
            token: TokenId(i as u32),
            ref_prob: p,
        })
        .collect();
    let k = top_k.max(1);
    if pool.len() > k {
        pool.select_nth_unstable_by(k - 1, order);
        pool.truncate(k);
    }
    pool.sort_unstable_by(order);

    let mut keep = pool.len();
    let mut cum = 0.0;
    for (i, c) in pool.iter().enumerate() {
        cum += c.ref_prob;
        if cum >= top_p {
            keep = i + 1;
            break;
        }
    }
    pool.truncate(keep.max(1));
    Ok(CandidateSet {
        entries: pool,
        position,
    })
}

/// Reference probabilities restricted to the candidate set and rescaled to
/// sum to one.
pub fn renormalize(cs: &CandidateSet) -> Vec<f64> {
    let total: f64 = cs.entries.iter().map(|c| c.ref_prob).sum();
    cs.entries.iter().map(|c| c.ref_prob / total).collect()
}
