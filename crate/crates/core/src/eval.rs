//! Pairwise judging, preference rates and acceptance-rank statistics.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::mdp::{rollout, DecodeMode, DecodeParams, EpisodeRecord};
use crate::policy::AcceptPolicy;
use crate::refmodel::ReferenceModel;
use crate::reward::ResponseScorer;
use crate::rng::{stream, Stream};
use crate::token::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeResult {
    Win,
    Tie,
    Lose,
}

impl fmt::Display for JudgeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JudgeResult::Win => "win",
            JudgeResult::Tie => "tie",
            JudgeResult::Lose => "lose",
        })
    }
}

/// A wins only by being strictly better on both axes, and loses only by
/// being strictly worse on both.
pub fn judge_pair(help_a: f64, harm_a: f64, help_b: f64, harm_b: f64) -> Result<JudgeResult> {
    for v in [help_a, harm_a, help_b, harm_b] {
        if !v.is_finite() {
            return Err(Error::InvalidScore(format!("{v} is not a finite score")));
        }
    }
    Ok(if help_a > help_b && harm_a > harm_b {
        JudgeResult::Win
    } else if help_a < help_b && harm_a < harm_b {
        JudgeResult::Lose
    } else {
        JudgeResult::Tie
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRateResult {
    pub n_win: u64,
    pub n_tie: u64,
    pub n_lose: u64,
    /// Percentage in `[-100, 100]`.
    pub rate: f64,
}

impl fmt::Display for PreferenceRateResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "win {} / tie {} / lose {}: {:+.2}%",
            self.n_win, self.n_tie, self.n_lose, self.rate
        )
    }
}

impl PreferenceRateResult {
    /// The rate alone, as `+33.67%`.
    pub fn rate_text(&self) -> String {
        format!("{:+.2}%", self.rate)
    }
}

pub fn preference_rate(n_win: u64, n_tie: u64, n_lose: u64) -> Result<PreferenceRateResult> {
    let total = n_win + n_tie + n_lose;
    if total == 0 {
        return Err(Error::EmptyComparison);
    }
    Ok(PreferenceRateResult {
        n_win,
        n_tie,
        n_lose,
        rate: (n_win as f64 - n_lose as f64) / total as f64 * 100.0,
    })
}

pub fn tally(outcomes: impl IntoIterator<Item = JudgeResult>) -> Result<PreferenceRateResult> {
    let (mut w, mut t, mut l) = (0, 0, 0);
    for o in outcomes {
        match o {
            JudgeResult::Win => w += 1,
            JudgeResult::Tie => t += 1,
            JudgeResult::Lose => l += 1,
        }
    }
    preference_rate(w, t, l)
}

/// Counts of accepted tokens by candidate rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptanceHistogram {
    /// `counts[k - 1]` is the number of tokens accepted at rank `k`.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl AcceptanceHistogram {
    pub fn from_ranks<'a>(episodes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        let mut counts: Vec<u64> = Vec::new();
        let mut seen = false;
        for ranks in episodes {
            seen = true;
            for &k in ranks {
                if k == 0 {
                    return Err(Error::InvalidScore("accepted rank 0".into()));
                }
                if counts.len() < k {
                    counts.resize(k, 0);
                }
                counts[k - 1] += 1;
            }
        }
        if !seen {
            return Err(Error::EmptyInput);
        }
        let total = counts.iter().sum();
        Ok(AcceptanceHistogram { counts, total })
    }

    pub fn shares(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }

    pub fn share(&self, rank: usize) -> f64 {
        self.shares().get(rank.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// Share of tokens accepted at ranks 1 through `k`.
    pub fn cumulative_share(&self, k: usize) -> f64 {
        self.shares().iter().take(k).sum()
    }

    /// `rank share` lines followed by the rank 1-3 cumulative share.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.shares().iter().enumerate() {
            out.push_str(&format!("{} {:.6}\n", i + 1, s));
        }
        out.push_str(&format!("top3 {:.6}\n", self.cumulative_share(3)));
        out
    }
}

pub fn acceptance_histogram(records: &[EpisodeRecord]) -> Result<AcceptanceHistogram> {
    AcceptanceHistogram::from_ranks(records.iter().map(|r| r.accepted_ranks.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptComparison {
    pub prompt_id: usize,
    pub help_a: f64,
    pub harm_a: f64,
    pub help_b: f64,
    pub harm_b: f64,
    pub outcome: JudgeResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: PreferenceRateResult,
    pub records: Vec<PromptComparison>,
    pub responses_a: Vec<Vec<TokenId>>,
    pub responses_b: Vec<Vec<TokenId>>,
}

impl Evaluation {
    /// One JSON object per prompt, then a summary object.
    pub fn report_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }
}

/// Decodes every prompt with both policies and judges each response pair.
/// Harmlessness is the negated cost. In sampled mode both systems share a
/// per-prompt seed.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_pair_of_systems(
    prompts: &[Vec<TokenId>],
    system_a: &dyn AcceptPolicy,
    system_b: &dyn AcceptPolicy,
    ref_model: &dyn ReferenceModel,
    params: &DecodeParams,
    scorer: &dyn ResponseScorer,
    mode: DecodeMode,
    seed: u64,
) -> Result<Evaluation> {
    if prompts.is_empty() {
        return Err(Error::EmptyComparison);
    }
    let mut records = Vec::with_capacity(prompts.len());
    let mut responses_a = Vec::with_capacity(prompts.len());
    let mut responses_b = Vec::with_capacity(prompts.len());
    for (id, prompt) in prompts.iter().enumerate() {
        let decode = |policy: &dyn AcceptPolicy| -> Result<(Vec<TokenId>, f64, f64)> {
            let mut rng = stream(seed.wrapping_add(id as u64), Stream::Eval);
            let ep = rollout(prompt, ref_model, policy, params, None, &mut rng, mode)?;
            let (r, c) = scorer.score(prompt, &ep.response)?;
            Ok((ep.response, r, -c))
        };
        let (ya, help_a, harm_a) = decode(system_a)?;
        let (yb, help_b, harm_b) = decode(system_b)?;
        records.push(PromptComparison {
            prompt_id: id,
            help_a,
            harm_a,
            help_b,
            harm_b,
            outcome: judge_pair(help_a, harm_a, help_b, harm_b)?,
        });
        responses_a.push(ya);
        responses_b.push(yb);
    }
    Ok(Evaluation {
        summary: tally(records.iter().map(|r| r.outcome))?,
        records,
        responses_a,
        responses_b,
    })
}

/// Lines of four numbers `help_a harm_a help_b harm_b`, separated by
/// whitespace or commas.
pub fn parse_score_file(text: &str) -> Result<Vec<[f64; 4]>> {
    const WHAT: &str = "score file";
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let vals = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(WHAT, i + 1, format!("`{s}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let row: [f64; 4] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::parse(WHAT, i + 1, format!("expected 4 scores, found {}", v.len())))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for a positive mean difference.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = if se > 0.0 {
        mean / se
    } else if mean > 0.0 {
        f64::INFINITY
    } else if mean < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::InvalidScore(e.to_string()))?;
    let p_greater = if t.is_infinite() {
        if t > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        1.0 - dist.cdf(t)
    };
    let p_two_sided = if t.is_infinite() {
        0.0
    } else {
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t,
        p_greater,
        p_two_sided: p_two_sided.min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{parse_episode_dump, rollout, write_episode_dump};
    use crate::policy::{AlwaysAccept, AlwaysReject, FnPolicy};
    use crate::refmodel::ToyBigramModel;
    use crate::reward::ToyScorers;
    use crate::token::Vocab;
    use proptest::prelude::*;

    #[test]
    fn judge_examples() {
        assert_eq!(judge_pair(2.0, 3.0, 1.0, 1.0).unwrap(), JudgeResult::Win);
        assert_eq!(judge_pair(2.0, 1.0, 1.0, 3.0).unwrap(), JudgeResult::Tie);
        assert_eq!(judge_pair(1.0, 1.0, 1.0, 1.0).unwrap(), JudgeResult::Tie);
        assert_eq!(judge_pair(0.0, 0.0, 1.0, 1.0).unwrap(), JudgeResult::Lose);
        assert!(matches!(
            judge_pair(f64::NAN, 0.0, 0.0, 0.0),
            Err(Error::InvalidScore(_))
        ));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(preference_rate(93, 80, 26).unwrap().rate_text(), "+33.67%");
        assert_eq!(preference_rate(98, 82, 19).unwrap().rate_text(), "+39.70%");
        assert_eq!(preference_rate(0, 17, 0).unwrap().rate, 0.0);
        assert_eq!(preference_rate(0, 17, 0).unwrap().rate_text(), "+0.00%");
        assert!(matches!(preference_rate(0, 0, 0), Err(Error::EmptyComparison)));
    }

    #[test]
    fn score_file_parsing() {
        assert_eq!(
            parse_score_file("2 3 1 1\n# x\n\n1,2,3,4\n").unwrap(),
            vec![[2.0, 3.0, 1.0, 1.0], [1.0, 2.0, 3.0, 4.0]]
        );
        assert!(matches!(parse_score_file("1 2 3"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_score_file("1 2 3 x").is_err());
    }

    fn toy() -> ToyBigramModel {
        let vocab = Vocab::with_eos(8, TokenId(0)).unwrap();
        ToyBigramModel::random(vocab, 1.5, &mut stream(2, Stream::Data))
    }

    fn params() -> DecodeParams {
        DecodeParams {
            top_k: 4,
            top_p: 1.0,
            max_len: 8,
        }
    }

    #[test]
    fn histogram_extremes() {
        let m = toy();
        let prompts: Vec<Vec<TokenId>> = (1..8).map(|i| vec![TokenId(i)]).collect();
        let mut rng = stream(0, Stream::Eval);
        let acc: Vec<EpisodeRecord> = prompts
            .iter()
            .map(|p| {
                rollout(p, &m, &AlwaysAccept, &params(), None, &mut rng, DecodeMode::Sample)
                    .unwrap()
                    .record()
            })
            .collect();
        let h = acceptance_histogram(&acc).unwrap();
        assert_eq!(h.share(1), 1.0);
        // Top-p of 1 with top-k 4 on a full-support model gives four candidates everywhere.
        let rej: Vec<EpisodeRecord> = prompts
            .iter()
            .map(|p| {
                rollout(p, &m, &AlwaysReject, &params(), None, &mut rng, DecodeMode::Sample)
                    .unwrap()
                    .record()
            })
            .collect();
        let h = acceptance_histogram(&rej).unwrap();
        assert_eq!(h.share(4), 1.0);
        assert!(matches!(acceptance_histogram(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn histogram_matches_recount() {
        let m = toy();
        let pol = FnPolicy(|f: &[f64]| 0.2 + 0.6 * f[f.len() - 1]);
        let mut rng = stream(1, Stream::Eval);
        let recs: Vec<EpisodeRecord> = (0..50)
            .map(|i| {
                rollout(
                    &[TokenId(1 + i % 7)],
                    &m,
                    &pol,
                    &params(),
                    None,
                    &mut rng,
                    DecodeMode::Sample,
                )
                .unwrap()
                .record()
            })
            .collect();
        let recs = parse_episode_dump(&write_episode_dump(&recs)).unwrap();
        let h = acceptance_histogram(&recs).unwrap();
        let mut counts = [0u64; 8];
        for r in &recs {
            for &k in &r.accepted_ranks {
                counts[k] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate().skip(1) {
            assert_eq!(h.counts.get(k - 1).copied().unwrap_or(0), c);
        }
        assert!((h.shares().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_comparison_ties() {
        let m = toy();
        let prompts: Vec<Vec<TokenId>> = (1..8).map(|i| vec![TokenId(i)]).collect();
        let s = ToyScorers::new([(TokenId(2), 1.0)], [(TokenId(3), 1.0)], 5.0).unwrap();
        let pol = FnPolicy(|f: &[f64]| f[f.len() - 1]);
        for mode in [DecodeMode::Greedy, DecodeMode::Sample] {
            let e = evaluate_pair_of_systems(&prompts, &pol, &pol, &m, &params(), &s, mode, 3).unwrap();
            assert_eq!(e.summary.n_tie, 7);
            assert_eq!(e.summary.rate, 0.0);
        }
    }

    #[test]
    fn paired_test_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| f64::from(i % 5) + 1.0).collect();
        let b: Vec<f64> = (0..50).map(|i| f64::from(i % 7) * 0.3).collect();
        let t = paired_t_test(&a, &b).unwrap();
        assert!(t.mean_diff > 0.0);
        assert!(t.p_greater < 0.01);
        let same = paired_t_test(&a, &a).unwrap();
        assert_eq!(same.p_two_sided, 1.0);
    }

    proptest! {
        #[test]
        fn swapping_negates_rate(outcomes in prop::collection::vec(0u8..3, 1..50)) {
            let o: Vec<JudgeResult> = outcomes.iter().map(|&x| [JudgeResult::Win, JudgeResult::Tie, JudgeResult::Lose][x as usize]).collect();
            let swapped = o.iter().map(|r| match r {
                JudgeResult::Win => JudgeResult::Lose,
                JudgeResult::Lose => JudgeResult::Win,
                JudgeResult::Tie => JudgeResult::Tie,
            });
            let a = tally(o.iter().copied()).unwrap();
            let b = tally(swapped).unwrap();
            prop_assert_eq!(a.rate, -b.rate);
            prop_assert!((-100.0..=100.0).contains(&a.rate));
        }

        #[test]
        fn judge_is_monotone_invariant(s in prop::collection::vec(-5.0f64..5.0, 4)) {
            let f = |x: f64| x.exp() * 3.0 + 1.0;
            let a = judge_pair(s[0], s[1], s[2], s[3]).unwrap();
            let b = judge_pair(f(s[0]), s[1].powi(3), f(s[2]), s[3].powi(3)).unwrap();
            prop_assert_eq!(a, b);
            let sw = judge_pair(s[2], s[3], s[0], s[1]).unwrap();
            let expect = match a { JudgeResult::Win => JudgeResult::Lose, JudgeResult::Lose => JudgeResult::Win, t => t };
            prop_assert_eq!(sw, expect);
        }
    }
}
