//! The accept-reject decoding process.
//!
//! At each response position the reference model's truncated, sorted
//! candidate set is walked head-first. The policy sees one candidate at a
//! time and either accepts it (the token is emitted and a new set is built
//! for the next position) or rejects it (the next candidate becomes head).
//! The last candidate is always accepted.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{KlMode, RunConfig};
use crate::error::{Error, Result};
use crate::policy::AcceptPolicy;
use crate::refmodel::{FeatureQuery, ReferenceModel};
use crate::reward::{kl_divergence, micro_step_reward, pointwise_step_reward, RewardContext};
use crate::token::TokenId;
use crate::truncation::{renormalize, truncate_and_sort, CandidateSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub top_k: usize,
    pub top_p: f64,
    pub max_len: usize,
}

impl From<&RunConfig> for DecodeParams {
    fn from(cfg: &RunConfig) -> Self {
        DecodeParams {
            top_k: cfg.top_k,
            top_p: cfg.top_p,
            max_len: cfg.max_response_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Sample,
    /// Accept iff the accept probability is at least one half.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcceptAction {
    pub accept: bool,
    /// Acceptance imposed by the fallback rule on the last candidate.
    pub forced: bool,
}

impl AcceptAction {
    pub const ACCEPT: AcceptAction = AcceptAction {
        accept: true,
        forced: false,
    };
    pub const REJECT: AcceptAction = AcceptAction {
        accept: false,
        forced: false,
    };
    pub const FORCED: AcceptAction = AcceptAction {
        accept: true,
        forced: true,
    };

    /// Index into two-way action outputs.
    pub fn index(self) -> usize {
        usize::from(self.accept)
    }
}

#[derive(Debug, Clone)]
pub struct DecodeState {
    pub prompt: Arc<[TokenId]>,
    pub generated: Vec<TokenId>,
    /// `None` once terminal.
    pub candidates: Option<Arc<CandidateSet>>,
    /// 1-based rank of the head candidate; 0 once terminal.
    pub rank: usize,
    pub features: Vec<f64>,
    pub terminal: bool,
}

impl DecodeState {
    pub fn initial(prompt: &[TokenId], ref_model: &dyn ReferenceModel, params: &DecodeParams) -> Result<Self> {
        ref_model.vocab().check_all(prompt)?;
        let mut state = DecodeState {
            prompt: prompt.into(),
            generated: Vec::new(),
            candidates: None,
            rank: 0,
            features: Vec::new(),
            terminal: params.max_len == 0,
        };
        if !state.terminal {
            state.open_position(ref_model, params)?;
        }
        Ok(state)
    }

    /// Prompt followed by the tokens generated so far.
    pub fn context(&self) -> Vec<TokenId> {
        let mut ctx = Vec::with_capacity(self.prompt.len() + self.generated.len());
        ctx.extend_from_slice(&self.prompt);
        ctx.extend_from_slice(&self.generated);
        ctx
    }

    pub fn position(&self) -> usize {
        self.generated.len()
    }

    /// The candidate under consideration.
    pub fn head(&self) -> Option<TokenId> {
        self.candidates
            .as_ref()
            .and_then(|cs| cs.at_rank(self.rank))
            .map(|c| c.token)
    }

    /// Whether the fallback rule forces acceptance here.
    pub fn is_forced(&self) -> bool {
        self.candidates.as_ref().is_some_and(|cs| self.rank == cs.len())
    }

    fn open_position(&mut self, ref_model: &dyn ReferenceModel, params: &DecodeParams) -> Result<()> {
        let context = self.context();
        let dist = ref_model.next_token_distribution(&context)?;
        let cs = Arc::new(truncate_and_sort(&dist, params.top_k, params.top_p, self.position())?);
        self.features = candidate_features(ref_model, &context, &cs, 1, params.max_len)?;
        self.candidates = Some(cs);
        self.rank = 1;
        Ok(())
    }
}

fn feature_query(cs: &CandidateSet, rank: usize, max_len: usize) -> Result<FeatureQuery> {
    let c = cs.at_rank(rank).ok_or(Error::EmptyCandidates)?;
    Ok(FeatureQuery {
        candidate: c.token,
        position: cs.position(),
        max_len,
        rank,
        set_size: cs.len(),
        ref_prob: c.ref_prob,
    })
}

/// Features of the state whose head is the rank-`rank` candidate.
pub fn candidate_features(
    ref_model: &dyn ReferenceModel,
    context: &[TokenId],
    cs: &CandidateSet,
    rank: usize,
    max_len: usize,
) -> Result<Vec<f64>> {
    ref_model.context_features(context, &feature_query(cs, rank, max_len)?)
}

/// The policy's accept probability for every candidate of a position, each
/// evaluated as if it were head.
pub fn candidate_accept_probs(
    ref_model: &dyn ReferenceModel,
    policy: &dyn AcceptPolicy,
    context: &[TokenId],
    cs: &CandidateSet,
    max_len: usize,
) -> Result<Vec<f64>> {
    (1..=cs.len())
        .map(|rank| {
            let f = candidate_features(ref_model, context, cs, rank, max_len)?;
            checked_prob(policy.accept_prob(&f)?)
        })
        .collect()
}

fn checked_prob(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::InvalidDistribution(format!(
            "accept probability {p} outside [0, 1]"
        )))
    }
}

pub fn transition(
    state: &DecodeState,
    action: AcceptAction,
    ref_model: &dyn ReferenceModel,
    params: &DecodeParams,
) -> Result<DecodeState> {
    if state.terminal {
        return Err(Error::TerminalState);
    }
    let cs = state.candidates.as_ref().ok_or(Error::TerminalState)?;
    let size = cs.len();
    let violation = Error::FallbackViolation { rank: state.rank, size };
    if (action.forced && (!action.accept || state.rank != size)) || (!action.accept && state.rank >= size) {
        return Err(violation);
    }

    if !action.accept {
        let rank = state.rank + 1;
        return Ok(DecodeState {
            prompt: Arc::clone(&state.prompt),
            generated: state.generated.clone(),
            candidates: Some(Arc::clone(cs)),
            rank,
            features: candidate_features(ref_model, &state.context(), cs, rank, params.max_len)?,
            terminal: false,
        });
    }

    let token = cs.at_rank(state.rank).ok_or(Error::EmptyCandidates)?.token;
    let mut generated = state.generated.clone();
    generated.push(token);
    let terminal = token == ref_model.vocab().eos() || generated.len() >= params.max_len;
    let mut next = DecodeState {
        prompt: Arc::clone(&state.prompt),
        generated,
        candidates: None,
        rank: 0,
        features: Vec::new(),
        terminal,
    };
    if !terminal {
        next.open_position(ref_model, params)?;
    }
    Ok(next)
}

/// Probability that the sequential accept-reject walk stops at each
/// candidate, with the last candidate accepted unconditionally.
pub fn induced_token_dist(accept_probs: &[f64]) -> Result<Vec<f64>> {
    let m = accept_probs.len();
    if m == 0 {
        return Err(Error::EmptyCandidates);
    }
    let mut out = Vec::with_capacity(m);
    let mut survive = 1.0;
    for (k, &a) in accept_probs.iter().enumerate() {
        let a = if k + 1 == m { 1.0 } else { checked_prob(a)? };
        out.push(survive * a);
        survive *= 1.0 - a;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroStep {
    /// Response position (tokens generated before this step).
    pub position: usize,
    pub rank: usize,
    pub set_size: usize,
    pub candidate: TokenId,
    pub features: Vec<f64>,
    /// Policy accept probability; 1 on forced steps.
    pub accept_prob: f64,
    pub action: AcceptAction,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub steps: Vec<MicroStep>,
    /// Composite reward of the finished response, when scored.
    pub terminal_reward: Option<f64>,
    /// Raw `(reward, cost)` scores, when scored.
    pub scores: Option<(f64, f64)>,
    /// Per-position divergence of the induced distribution from the
    /// renormalized reference; filled when scored.
    pub position_kls: Vec<f64>,
}

impl Episode {
    pub fn accepted_ranks(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| s.action.accept).map(|s| s.rank).collect()
    }

    pub fn set_sizes(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.action.accept)
            .map(|s| s.set_size)
            .collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn record(&self) -> EpisodeRecord {
        EpisodeRecord {
            prompt: self.prompt.clone(),
            response: self.response.clone(),
            accepted_ranks: self.accepted_ranks(),
            set_sizes: self.set_sizes(),
            step_rewards: self.steps.iter().map(|s| s.reward).collect(),
            position_kl: self.position_kls.clone(),
            terminal_reward: self.terminal_reward,
            reward: self.scores.map(|s| s.0),
            cost: self.scores.map(|s| s.1),
        }
    }
}

/// Generates one response. With `rewards`, every micro-step carries its
/// shaped reward and the episode is scored.
pub fn rollout(
    prompt: &[TokenId],
    ref_model: &dyn ReferenceModel,
    policy: &dyn AcceptPolicy,
    params: &DecodeParams,
    rewards: Option<&RewardContext>,
    rng: &mut impl Rng,
    mode: DecodeMode,
) -> Result<Episode> {
    let mut state = DecodeState::initial(prompt, ref_model, params)?;
    let mut steps = Vec::new();
    let mut position_kls = Vec::new();
    let mut terminal_reward = None;
    let mut scores = None;

    while !state.terminal {
        let cs = Arc::clone(state.candidates.as_ref().ok_or(Error::TerminalState)?);
        let forced = state.is_forced();
        let p = if forced {
            1.0
        } else {
            checked_prob(policy.accept_prob(&state.features)?)?
        };
        let accept = forced
            || match mode {
                DecodeMode::Sample => rng.gen::<f64>() < p,
                DecodeMode::Greedy => p >= 0.5,
            };
        let action = AcceptAction { accept, forced };

        let mut kl = 0.0;
        if let (Some(_), true) = (rewards, accept) {
            let probs = candidate_accept_probs(ref_model, policy, &state.context(), &cs, params.max_len)?;
            kl = kl_divergence(&induced_token_dist(&probs)?, &renormalize(&cs))?;
            position_kls.push(kl);
        }

        let next = transition(&state, action, ref_model, params)?;

        let mut reward = 0.0;
        if let Some(rc) = rewards {
            let composite = if next.terminal {
                let (r, c) = rc.spec.scorer.score(prompt, &next.generated)?;
                scores = Some((r, c));
                let total = rc.spec.composite(r, c);
                terminal_reward = Some(total);
                Some(total)
            } else {
                None
            };
            reward = match rc.kl.mode {
                KlMode::Distributional => micro_step_reward(accept, next.terminal, kl, composite, &rc.kl)?,
                KlMode::Pointwise => {
                    let shaped = if forced {
                        0.0
                    } else {
                        pointwise_step_reward(accept, p, reference_accept_prob(&cs, state.rank), rc.kl.lambda)
                    };
                    shaped + composite.unwrap_or(0.0)
                }
            };
        }

        steps.push(MicroStep {
            position: state.position(),
            rank: state.rank,
            set_size: cs.len(),
            candidate: state.head().ok_or(Error::EmptyCandidates)?,
            features: std::mem::take(&mut state.features),
            accept_prob: p,
            action,
            reward,
        });
        state = next;
    }

    Ok(Episode {
        prompt: prompt.to_vec(),
        response: state.generated,
        steps,
        terminal_reward,
        scores,
        position_kls,
    })
}

/// Accept probability at `rank` under which the walk reproduces the
/// renormalized reference distribution: `q_k / sum_{j >= k} q_j`.
pub fn reference_accept_prob(cs: &CandidateSet, rank: usize) -> f64 {
    let q = renormalize(cs);
    let tail: f64 = q[rank - 1..].iter().sum();
    q[rank - 1] / tail
}

/// Log-probability that the policy emits `response` after `prompt`.
/// Negative infinity if some token falls outside its candidate set.
pub fn sequence_log_prob_under_policy(
    prompt: &[TokenId],
    response: &[TokenId],
    policy: &dyn AcceptPolicy,
    ref_model: &dyn ReferenceModel,
    params: &DecodeParams,
) -> Result<f64> {
    let vocab = ref_model.vocab();
    vocab.check_all(prompt)?;
    vocab.check_all(response)?;
    let mut context = prompt.to_vec();
    let mut total = 0.0;
    for (i, &tok) in response.iter().enumerate() {
        let dist = ref_model.next_token_distribution(&context)?;
        let cs = truncate_and_sort(&dist, params.top_k, params.top_p, i)?;
        let Some(rank) = cs.entries().iter().position(|c| c.token == tok).map(|r| r + 1) else {
            return Ok(f64::NEG_INFINITY);
        };
        // Candidates past the accepted rank do not affect its probability.
        let mut probs = Vec::with_capacity(rank);
        for r in 1..=rank.min(cs.len() - 1) {
            let f = candidate_features(ref_model, &context, &cs, r, params.max_len)?;
            probs.push(checked_prob(policy.accept_prob(&f)?)?);
        }
        if rank == cs.len() {
            probs.push(1.0);
        }
        let survive: f64 = probs[..rank - 1].iter().map(|a| 1.0 - a).product();
        total += (survive * probs[rank - 1]).ln();
        context.push(tok);
    }
    Ok(total)
}

/// Log-probability of an episode's response under `policy`.
pub fn response_log_prob(
    episode: &Episode,
    policy: &dyn AcceptPolicy,
    ref_model: &dyn ReferenceModel,
    params: &DecodeParams,
) -> Result<f64> {
    sequence_log_prob_under_policy(&episode.prompt, &episode.response, policy, ref_model, params)
}

/// One line of an episode dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub accepted_ranks: Vec<usize>,
    pub set_sizes: Vec<usize>,
    pub step_rewards: Vec<f64>,
    #[serde(default)]
    pub position_kl: Vec<f64>,
    #[serde(default)]
    pub terminal_reward: Option<f64>,
    #[serde(default)]
    pub reward: Option<f64>,
    #[serde(default)]
    pub cost: Option<f64>,
}

impl EpisodeRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let n = self.response.len();
        if self.accepted_ranks.len() != n || self.set_sizes.len() != n {
            return Err("accepted_ranks and set_sizes need one entry per response token".into());
        }
        if let Some((k, m)) = self
            .accepted_ranks
            .iter()
            .zip(&self.set_sizes)
            .find(|(&k, &m)| k == 0 || k > m)
        {
            return Err(format!("accepted rank {k} outside candidate set of size {m}"));
        }
        let micro: usize = self.accepted_ranks.iter().sum();
        if self.step_rewards.len() != micro {
            return Err(format!(
                "{} step rewards for {micro} micro-steps",
                self.step_rewards.len()
            ));
        }
        if !self.position_kl.is_empty() && self.position_kl.len() != n {
            return Err("position_kl needs one entry per response token".into());
        }
        Ok(())
    }
}

pub fn write_episode_dump(records: &[EpisodeRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn parse_episode_dump(text: &str) -> Result<Vec<EpisodeRecord>> {
    const WHAT: &str = "episode dump";
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: EpisodeRecord = serde_json::from_str(l).map_err(|e| Error::parse(WHAT, i + 1, e.to_string()))?;
            rec.check().map_err(|m| Error::parse(WHAT, i + 1, m))?;
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{AlwaysAccept, AlwaysReject, FnPolicy};
    use crate::refmodel::ToyBigramModel;
    use crate::rng::{stream, Stream};
    use crate::token::Vocab;
    use proptest::prelude::*;

    fn toy(v: usize, seed: u64) -> ToyBigramModel {
        let vocab = Vocab::with_eos(v, TokenId(0)).unwrap();
        ToyBigramModel::random(vocab, 1.5, &mut stream(seed, Stream::Data))
    }

    fn params(h: usize) -> DecodeParams {
        DecodeParams {
            top_k: 50,
            top_p: 0.95,
            max_len: h,
        }
    }

    fn argmax(row: &[f64]) -> TokenId {
        let mut best = 0;
        for (i, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = i;
            }
        }
        TokenId(best as u32)
    }

    #[test]
    fn induced_examples() {
        let d = induced_token_dist(&[0.6, 0.5, 0.3]).unwrap();
        let want = [0.6, 0.2, 0.2];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(induced_token_dist(&[1.0, 0.4]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(induced_token_dist(&[]), Err(Error::EmptyCandidates)));
        assert!(induced_token_dist(&[1.5, 0.0]).is_err());
    }

    #[test]
    fn reject_keeps_the_same_set() {
        let m = toy(6, 3);
        let p = params(4);
        let s = DecodeState::initial(&[TokenId(2)], &m, &p).unwrap();
        let size = s.candidates.as_ref().unwrap().len();
        assert!(size >= 2);
        let r = transition(&s, AcceptAction::REJECT, &m, &p).unwrap();
        assert_eq!(r.rank, 2);
        assert!(Arc::ptr_eq(
            s.candidates.as_ref().unwrap(),
            r.candidates.as_ref().unwrap()
        ));
        assert_eq!(r.generated, s.generated);
    }

    #[test]
    fn accept_extends_and_rebuilds() {
        let m = toy(6, 3);
        let p = params(4);
        let s = DecodeState::initial(&[TokenId(2)], &m, &p).unwrap();
        let head = s.head().unwrap();
        let a = transition(&s, AcceptAction::ACCEPT, &m, &p).unwrap();
        assert_eq!(a.generated, vec![head]);
        if !a.terminal {
            assert_eq!(a.rank, 1);
            assert_eq!(a.candidates.as_ref().unwrap().position(), 1);
        }
    }

    #[test]
    fn fallback_violation() {
        let m = toy(6, 3);
        let p = params(4);
        let mut s = DecodeState::initial(&[TokenId(2)], &m, &p).unwrap();
        while !s.is_forced() {
            s = transition(&s, AcceptAction::REJECT, &m, &p).unwrap();
        }
        assert!(matches!(
            transition(&s, AcceptAction::REJECT, &m, &p),
            Err(Error::FallbackViolation { .. })
        ));
        let s0 = DecodeState::initial(&[TokenId(2)], &m, &p).unwrap();
        assert!(matches!(
            transition(&s0, AcceptAction::FORCED, &m, &p),
            Err(Error::FallbackViolation { .. })
        ));
        assert!(transition(&s, AcceptAction::FORCED, &m, &p).is_ok());
    }

    #[test]
    fn eos_accept_is_terminal() {
        // Token 1 always leads to eos with certainty.
        let vocab = Vocab::with_eos(3, TokenId(0)).unwrap();
        let m = ToyBigramModel::new(
            vocab,
            vec![0.0, 1.0, 0.0],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        )
        .unwrap();
        let p = params(8);
        let s = DecodeState::initial(&[TokenId(1)], &m, &p).unwrap();
        assert_eq!(s.head(), Some(TokenId(0)));
        let t = transition(&s, AcceptAction::FORCED, &m, &p).unwrap();
        assert!(t.terminal);
        assert!(t.candidates.is_none());
        assert!(matches!(
            transition(&t, AcceptAction::ACCEPT, &m, &p),
            Err(Error::TerminalState)
        ));
    }

    #[test]
    fn always_accept_is_reference_greedy() {
        let m = toy(8, 11);
        let p = params(10);
        let ep = rollout(
            &[TokenId(3)],
            &m,
            &AlwaysAccept,
            &p,
            None,
            &mut stream(0, Stream::Env),
            DecodeMode::Sample,
        )
        .unwrap();
        let mut prev = TokenId(3);
        for &t in &ep.response {
            assert_eq!(t, argmax(m.row(Some(prev))));
            prev = t;
        }
        assert!(ep.accepted_ranks().iter().all(|&k| k == 1));
    }

    #[test]
    fn always_reject_takes_last_candidate() {
        let m = toy(8, 12);
        let p = params(10);
        let ep = rollout(
            &[TokenId(3)],
            &m,
            &AlwaysReject,
            &p,
            None,
            &mut stream(0, Stream::Env),
            DecodeMode::Sample,
        )
        .unwrap();
        let mut ctx = vec![TokenId(3)];
        for &t in &ep.response {
            let cs = truncate_and_sort(&m.next_token_distribution(&ctx).unwrap(), 50, 0.95, 0).unwrap();
            assert_eq!(t, cs.entries().last().unwrap().token);
            ctx.push(t);
        }
        assert!(ep.steps.iter().filter(|s| s.action.accept).all(|s| s.action.forced));
    }

    #[test]
    fn singleton_sets_ignore_policy() {
        let m = toy(8, 13);
        let p = DecodeParams {
            top_k: 1,
            top_p: 0.95,
            max_len: 10,
        };
        let a = rollout(
            &[TokenId(5)],
            &m,
            &AlwaysAccept,
            &p,
            None,
            &mut stream(0, Stream::Env),
            DecodeMode::Sample,
        )
        .unwrap();
        let r = rollout(
            &[TokenId(5)],
            &m,
            &AlwaysReject,
            &p,
            None,
            &mut stream(0, Stream::Env),
            DecodeMode::Sample,
        )
        .unwrap();
        assert_eq!(a.response, r.response);
    }

    #[test]
    fn greedy_tie_accepts() {
        let m = toy(8, 14);
        let half = FnPolicy(|_: &[f64]| 0.5);
        let ep = rollout(
            &[TokenId(1)],
            &m,
            &half,
            &params(6),
            None,
            &mut stream(0, Stream::Env),
            DecodeMode::Greedy,
        )
        .unwrap();
        assert!(ep.accepted_ranks().iter().all(|&k| k == 1));
    }

    #[test]
    fn log_prob_examples() {
        // Two candidates at every position; the policy accepts the head with 0.6.
        let vocab = Vocab::with_eos(3, TokenId(0)).unwrap();
        let row = vec![0.0, 0.7, 0.3];
        let m = ToyBigramModel::new(vocab, row.clone(), vec![row.clone(), row.clone(), row]).unwrap();
        let pol = FnPolicy(|_: &[f64]| 0.6);
        let p = DecodeParams {
            top_k: 50,
            top_p: 1.0,
            max_len: 2,
        };
        let one = sequence_log_prob_under_policy(&[TokenId(1)], &[TokenId(1)], &pol, &m, &p).unwrap();
        assert!((one - 0.6f64.ln()).abs() < 1e-12);
        let two = sequence_log_prob_under_policy(&[TokenId(1)], &[TokenId(1), TokenId(2)], &pol, &m, &p).unwrap();
        assert!((two - (0.6f64 * 0.4).ln()).abs() < 1e-12);
        let outside = sequence_log_prob_under_policy(&[TokenId(1)], &[TokenId(0)], &pol, &m, &p).unwrap();
        assert_eq!(outside, f64::NEG_INFINITY);
    }

    #[test]
    fn episode_invariants_and_dump_round_trip() {
        let m = toy(10, 21);
        let pol = FnPolicy(|f: &[f64]| 0.3 + 0.4 * f[f.len() - 1]);
        let p = params(12);
        let mut rng = stream(5, Stream::Env);
        let mut records = Vec::new();
        for i in 0..20 {
            let ep = rollout(&[TokenId(1 + i % 9)], &m, &pol, &p, None, &mut rng, DecodeMode::Sample).unwrap();
            let accepted: Vec<TokenId> = ep
                .steps
                .iter()
                .filter(|s| s.action.accept)
                .map(|s| s.candidate)
                .collect();
            assert_eq!(accepted, ep.response);
            assert!(ep.response.len() <= 12);
            assert!(ep.response.len() == 12 || ep.response.last() == Some(&TokenId(0)));
            for (pos, &k) in ep.accepted_ranks().iter().enumerate() {
                assert_eq!(ep.steps.iter().filter(|s| s.position == pos).count(), k);
            }
            records.push(ep.record());
        }
        let text = write_episode_dump(&records);
        assert_eq!(parse_episode_dump(&text).unwrap(), records);
    }

    #[test]
    fn dump_rejects_inconsistent_records() {
        let bad = r#"{"prompt":[1],"response":[2],"accepted_ranks":[3],"set_sizes":[2],"step_rewards":[0,0,0]}"#;
        assert!(matches!(parse_episode_dump(bad), Err(Error::Parse { line: 1, .. })));
        assert!(parse_episode_dump("not json").is_err());
    }

    proptest! {
        #[test]
        fn induced_normalized(a in prop::collection::vec(0.0f64..=1.0, 1..12)) {
            let d = induced_token_dist(&a).unwrap();
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(d.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn reference_accept_probs_reproduce_q(raw in prop::collection::vec(0.01f64..1.0, 1..12)) {
            let total: f64 = raw.iter().sum();
            let mut dist: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let fix: f64 = dist.iter().sum();
            dist[0] += 1.0 - fix;
            let cs = truncate_and_sort(&dist, 50, 0.9, 0).unwrap();
            let a: Vec<f64> = (1..=cs.len()).map(|k| reference_accept_prob(&cs, k)).collect();
            let d = induced_token_dist(&a).unwrap();
            for (x, y) in d.iter().zip(renormalize(&cs)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
