//! Reward shaping, response scorers and the pairwise reward model.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::config::{Activation, KlMode, RunConfig};
use crate::error::{Error, Result};
use crate::mdp::{candidate_accept_probs, induced_token_dist};
use crate::nn::{Adam, Mlp};
use crate::policy::AcceptPolicy;
use crate::refmodel::ReferenceModel;
use crate::rng::{stream, Stream};
use crate::token::{parse_token_list, TokenId};
use crate::truncation::{renormalize, CandidateSet};

/// Maps a finished response to `(reward, cost)`.
pub trait ResponseScorer: Send + Sync {
    fn score(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<(f64, f64)>;
}

#[derive(Clone)]
pub struct CompositeRewardSpec {
    pub alpha_r: f64,
    pub alpha_c: f64,
    pub scorer: Arc<dyn ResponseScorer>,
}

impl std::fmt::Debug for CompositeRewardSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompositeRewardSpec")
            .field("alpha_r", &self.alpha_r)
            .field("alpha_c", &self.alpha_c)
            .finish_non_exhaustive()
    }
}

impl CompositeRewardSpec {
    pub fn new(alpha_r: f64, alpha_c: f64, scorer: Arc<dyn ResponseScorer>) -> Result<Self> {
        if !(alpha_r >= 0.0 && alpha_c >= 0.0 && alpha_r.is_finite() && alpha_c.is_finite()) {
            return Err(Error::ConfigInvalid(
                "alpha_r and alpha_c must be finite and non-negative".into(),
            ));
        }
        if alpha_r + alpha_c <= 0.0 {
            return Err(Error::ConfigInvalid("alpha_r + alpha_c must be positive".into()));
        }
        Ok(CompositeRewardSpec {
            alpha_r,
            alpha_c,
            scorer,
        })
    }

    pub fn composite(&self, r: f64, c: f64) -> f64 {
        composite_reward(self.alpha_r, self.alpha_c, r, c)
    }
}

/// `alpha_r * r - alpha_c * c`.
pub fn composite_reward(alpha_r: f64, alpha_c: f64, r: f64, c: f64) -> f64 {
    alpha_r * r - alpha_c * c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlConfig {
    pub lambda: f64,
    pub mode: KlMode,
}

impl KlConfig {
    pub fn new(lambda: f64, mode: KlMode) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "KL coefficient {lambda} must be finite and non-negative"
            )));
        }
        Ok(KlConfig { lambda, mode })
    }
}

/// Everything a rollout needs to attach rewards.
#[derive(Debug, Clone)]
pub struct RewardContext {
    pub spec: CompositeRewardSpec,
    pub kl: KlConfig,
}

impl RewardContext {
    pub fn from_config(cfg: &RunConfig, scorer: Arc<dyn ResponseScorer>) -> Result<Self> {
        Ok(RewardContext {
            spec: CompositeRewardSpec::new(cfg.alpha_r, cfg.alpha_c, scorer)?,
            kl: KlConfig::new(cfg.kl_coeff, cfg.kl_mode)?,
        })
    }
}

/// `D_KL(p || q)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            found: p.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::ZeroSupport);
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Divergence of the policy-induced distribution over `cs` from the
/// renormalized reference.
pub fn position_kl(
    policy: &dyn AcceptPolicy,
    ref_model: &dyn ReferenceModel,
    context: &[TokenId],
    cs: &CandidateSet,
    max_len: usize,
) -> Result<f64> {
    if cs.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let probs = candidate_accept_probs(ref_model, policy, context, cs, max_len)?;
    kl_divergence(&induced_token_dist(&probs)?, &renormalize(cs))
}

/// Reward of one micro-step in distributional mode: rejections earn
/// nothing, each accepted token pays its position's KL once, and the final
/// acceptance also collects the composite reward.
pub fn micro_step_reward(
    accept: bool,
    is_terminal: bool,
    position_kl: f64,
    terminal_composite: Option<f64>,
    kl: &KlConfig,
) -> Result<f64> {
    if !accept {
        return Ok(0.0);
    }
    let shaped = -kl.lambda * position_kl;
    if is_terminal {
        let r = terminal_composite.ok_or(Error::MissingTerminalReward)?;
        Ok(r + shaped)
    } else {
        Ok(shaped)
    }
}

/// Pointwise shaping: `-lambda * (log pi(a) - log pi_ref(a))` where
/// `pi_ref` accepts with the probability that reproduces the reference.
pub fn pointwise_step_reward(accept: bool, accept_prob: f64, ref_accept_prob: f64, lambda: f64) -> f64 {
    let (p, r) = if accept {
        (accept_prob, ref_accept_prob)
    } else {
        (1.0 - accept_prob, 1.0 - ref_accept_prob)
    };
    -lambda * (p.max(f64::MIN_POSITIVE).ln() - r.max(f64::MIN_POSITIVE).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TokenClass {
    Helpful,
    Harmful,
}

/// Count-based reward and cost: helpful tokens add their weight to the
/// reward (up to `cap`), harmful tokens add theirs to the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScorers {
    weights: BTreeMap<TokenId, (TokenClass, f64)>,
    cap: f64,
    vocab_size: Option<usize>,
}

impl ToyScorers {
    pub fn new(
        helpful: impl IntoIterator<Item = (TokenId, f64)>,
        harmful: impl IntoIterator<Item = (TokenId, f64)>,
        cap: f64,
    ) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for (class, list) in [
            (TokenClass::Helpful, helpful.into_iter().collect::<Vec<_>>()),
            (TokenClass::Harmful, harmful.into_iter().collect()),
        ] {
            for (t, w) in list {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::ConfigInvalid(format!(
                        "weight {w} for token {t} must be finite and non-negative"
                    )));
                }
                if weights.insert(t, (class, w)).is_some() {
                    return Err(Error::ConfigInvalid(format!("token {t} listed twice")));
                }
            }
        }
        if cap.is_nan() || cap < 0.0 {
            return Err(Error::ConfigInvalid(format!("cap {cap} must be non-negative")));
        }
        Ok(ToyScorers {
            weights,
            cap,
            vocab_size: None,
        })
    }

    /// Rejects token ids at or above `size` when scoring.
    pub fn with_vocab_size(mut self, size: usize) -> Self {
        self.vocab_size = Some(size);
        self
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn class_of(&self, t: TokenId) -> Option<(TokenClass, f64)> {
        self.weights.get(&t).copied()
    }

    pub fn tokens(&self, class: TokenClass) -> Vec<TokenId> {
        self.weights
            .iter()
            .filter(|(_, (c, _))| *c == class)
            .map(|(&t, _)| t)
            .collect()
    }

    /// Whether the response contains any harmful token.
    pub fn is_harmful(&self, response: &[TokenId]) -> bool {
        response
            .iter()
            .any(|t| matches!(self.weights.get(t), Some((TokenClass::Harmful, _))))
    }

    /// Lines of `<token> helpful|harmful <weight>`, plus optional
    /// `cap <value>` and `vocab <size>` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "scorer file";
        let mut helpful = Vec::new();
        let mut harmful = Vec::new();
        let mut cap = f64::INFINITY;
        let mut vocab = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| !v.is_nan())
                    .ok_or_else(|| Error::parse(WHAT, line, format!("`{s}` is not a number")))
            };
            match fields.as_slice() {
                ["cap", v] => cap = num(v)?,
                ["vocab", v] => {
                    vocab = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::parse(WHAT, line, format!("`{v}` is not a vocabulary size")))?,
                    )
                }
                [tok, class, w] => {
                    let t = TokenId(
                        tok.parse::<u32>()
                            .map_err(|_| Error::parse(WHAT, line, format!("`{tok}` is not a token id")))?,
                    );
                    let w = num(w)?;
                    match *class {
                        "helpful" => helpful.push((t, w)),
                        "harmful" => harmful.push((t, w)),
                        other => {
                            return Err(Error::parse(WHAT, line, format!("unknown class `{other}`")));
                        }
                    }
                }
                _ => {
                    return Err(Error::parse(
                        WHAT,
                        line,
                        "expected `<token> helpful|harmful <weight>`, `cap <value>` or `vocab <size>`",
                    ))
                }
            }
        }
        let s = Self::new(helpful, harmful, cap).map_err(|e| Error::parse(WHAT, 0, e.to_string()))?;
        Ok(match vocab {
            Some(v) => s.with_vocab_size(v),
            None => s,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(v) = self.vocab_size {
            out.push_str(&format!("vocab {v}\n"));
        }
        if self.cap.is_finite() {
            out.push_str(&format!("cap {}\n", self.cap));
        }
        for (t, (class, w)) in &self.weights {
            let c = match class {
                TokenClass::Helpful => "helpful",
                TokenClass::Harmful => "harmful",
            };
            out.push_str(&format!("{t} {c} {w}\n"));
        }
        out
    }
}

impl ResponseScorer for ToyScorers {
    fn score(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<(f64, f64)> {
        if let Some(v) = self.vocab_size {
            if let Some(t) = prompt.iter().chain(response).find(|t| t.index() >= v) {
                return Err(Error::InvalidToken { id: t.0, vocab_size: v });
            }
        }
        let mut r = 0.0;
        let mut c = 0.0;
        for t in response {
            match self.weights.get(t) {
                Some((TokenClass::Helpful, w)) => r += w,
                Some((TokenClass::Harmful, w)) => c += w,
                None => {}
            }
        }
        Ok((r.min(self.cap), c))
    }
}

pub fn score_response(scorer: &dyn ResponseScorer, prompt: &[TokenId], response: &[TokenId]) -> Result<(f64, f64)> {
    scorer.score(prompt, response)
}

/// Bag-of-tokens counts over the response, divided by its length.
pub fn bag_of_tokens(response: &[TokenId], vocab_size: usize) -> Result<Vec<f64>> {
    let mut f = vec![0.0; vocab_size];
    for t in response {
        if t.index() >= vocab_size {
            return Err(Error::InvalidToken { id: t.0, vocab_size });
        }
        f[t.index()] += 1.0;
    }
    if !response.is_empty() {
        let n = response.len() as f64;
        f.iter_mut().for_each(|x| *x /= n);
    }
    Ok(f)
}

/// Learned scalar reward over response features.
#[derive(Debug, Clone, PartialEq)]
pub struct BtRewardModel {
    pub net: Mlp,
}

impl BtRewardModel {
    pub fn vocab_size(&self) -> usize {
        self.net.input_dim()
    }

    pub fn score_one(&self, response: &[TokenId]) -> Result<f64> {
        Ok(self.net.predict(&bag_of_tokens(response, self.vocab_size())?)?[0])
    }

    /// Mean pairwise loss `-log sigmoid(r_w - r_l)` over `pairs`.
    pub fn loss(&self, pairs: &[PreferencePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for p in pairs {
            total += neg_log_sigmoid(self.score_one(&p.chosen)? - self.score_one(&p.rejected)?);
        }
        Ok(total / pairs.len() as f64)
    }

    /// Fraction of pairs where the chosen response scores strictly higher.
    pub fn accuracy(&self, pairs: &[PreferencePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut right = 0;
        for p in pairs {
            if self.score_one(&p.chosen)? > self.score_one(&p.rejected)? {
                right += 1;
            }
        }
        Ok(f64::from(right) / pairs.len() as f64)
    }
}

impl ResponseScorer for BtRewardModel {
    fn score(&self, _prompt: &[TokenId], response: &[TokenId]) -> Result<(f64, f64)> {
        Ok((self.score_one(response)?, 0.0))
    }
}

/// `-ln sigmoid(d)`, computed without overflow.
pub fn neg_log_sigmoid(d: f64) -> f64 {
    if d > 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

fn sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
}

/// One pair per line: `prompt | chosen | rejected`, each a
/// whitespace-separated token list.
pub fn parse_preference_pairs(text: &str) -> Result<Vec<PreferencePair>> {
    const WHAT: &str = "preference pairs";
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parts: Vec<&str> = content.split('|').collect();
        if parts.len() != 3 {
            return Err(Error::parse(WHAT, line, "expected `prompt | chosen | rejected`"));
        }
        let list = |s: &str| parse_token_list(s).map_err(|m| Error::parse(WHAT, line, m));
        let pair = PreferencePair {
            prompt: list(parts[0])?,
            chosen: list(parts[1])?,
            rejected: list(parts[2])?,
        };
        if pair.chosen == pair.rejected {
            return Err(Error::parse(WHAT, line, "chosen and rejected responses are identical"));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_preference_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_preference_pairs(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Hidden widths; empty gives a linear scorer.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BtTrainConfig {
    fn default() -> Self {
        BtTrainConfig {
            epochs: 50,
            lr: 1e-2,
            hidden: vec![32],
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Fits a reward model to preference pairs with minibatch Adam. Returns the
/// model and the mean training loss of each epoch.
pub fn train_bt_reward(
    pairs: &[PreferencePair],
    vocab_size: usize,
    cfg: &BtTrainConfig,
) -> Result<(BtRewardModel, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(p) = pairs.iter().find(|p| p.chosen == p.rejected) {
        return Err(Error::ConfigInvalid(format!(
            "preference pair with identical responses {:?}",
            p.chosen
        )));
    }
    let feats: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|p| {
            Ok((
                bag_of_tokens(&p.chosen, vocab_size)?,
                bag_of_tokens(&p.rejected, vocab_size)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut dims = vec![vocab_size];
    dims.extend(&cfg.hidden);
    dims.push(1);
    let mut rng = stream(cfg.seed, Stream::PolicyInit);
    let mut net = Mlp::init(&dims, Activation::Relu, &mut rng);
    let mut adam = Adam::new(net.num_params(), cfg.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut data_rng = stream(cfg.seed, Stream::Data);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut data_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = vec![0.0; net.num_params()];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (fw, fl) = &feats[i];
                let (sw, cw) = net.forward(fw)?;
                let (sl, cl) = net.forward(fl)?;
                let d = sw[0] - sl[0];
                epoch_loss += neg_log_sigmoid(d);
                let g = -sigmoid(-d) * scale;
                net.backward_into(&cw, &[g], &mut grads)?;
                net.backward_into(&cl, &[-g], &mut grads)?;
            }
            adam.step(net.params_mut(), &grads)?;
        }
        losses.push(epoch_loss / pairs.len() as f64);
    }
    Ok((BtRewardModel { net }, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_reward(1.0, 1.0, 2.0, -3.0), 5.0);
        assert_eq!(composite_reward(2.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(composite_reward(1.0, 0.0, 0.7, 123.0), 0.7);
        let s: Arc<dyn ResponseScorer> = Arc::new(ToyScorers::new([], [], 1.0).unwrap());
        assert!(CompositeRewardSpec::new(0.0, 0.0, s.clone()).is_err());
        assert!(CompositeRewardSpec::new(-1.0, 1.0, s).is_err());
    }

    #[test]
    fn kl_examples() {
        let k = kl_divergence(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        assert!((k - 0.130812).abs() < 1e-6, "{k}");
        assert!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap().abs() < 1e-12);
        assert!(matches!(
            kl_divergence(&[1.0, 0.0], &[0.0, 1.0]),
            Err(Error::ZeroSupport)
        ));
    }

    #[test]
    fn micro_step_examples() {
        let kl = KlConfig::new(0.1, KlMode::Distributional).unwrap();
        assert_eq!(micro_step_reward(false, false, 0.5, None, &kl).unwrap(), 0.0);
        let r = micro_step_reward(true, false, 0.1308, None, &kl).unwrap();
        assert!((r + 0.013081).abs() < 1e-6);
        assert_eq!(micro_step_reward(true, true, 0.0, Some(5.0), &kl).unwrap(), 5.0);
        assert!(matches!(
            micro_step_reward(true, true, 0.0, None, &kl),
            Err(Error::MissingTerminalReward)
        ));
    }

    #[test]
    fn pointwise_zero_at_reference() {
        assert_eq!(pointwise_step_reward(true, 0.4, 0.4, 0.1), 0.0);
        assert_eq!(pointwise_step_reward(false, 0.4, 0.4, 0.1), 0.0);
        assert!(pointwise_step_reward(true, 0.9, 0.4, 0.1) < 0.0);
    }

    #[test]
    fn toy_scorer_examples() {
        let s = ToyScorers::new([(TokenId(1), 1.0)], [(TokenId(2), 1.0)], 3.0).unwrap();
        assert_eq!(s.score(&[], &ids(&[0, 3, 4])).unwrap(), (0.0, 0.0));
        assert_eq!(s.score(&[], &ids(&[2, 0, 2])).unwrap(), (0.0, 2.0));
        assert_eq!(s.score(&[], &ids(&[1; 10])).unwrap(), (3.0, 0.0));
        assert!(ToyScorers::new([(TokenId(1), 1.0)], [(TokenId(1), 1.0)], 3.0).is_err());
        let v = s.clone().with_vocab_size(4);
        assert!(matches!(
            v.score(&[], &ids(&[5])),
            Err(Error::InvalidToken { id: 5, .. })
        ));
    }

    #[test]
    fn scorer_file_round_trip() {
        let text = "# toy\nvocab 16\ncap 2.5\n3 helpful 1\n4 helpful 0.5\n7 harmful 2\n";
        let s = ToyScorers::parse(text).unwrap();
        assert_eq!(s.cap(), 2.5);
        assert_eq!(s.tokens(TokenClass::Harmful), ids(&[7]));
        assert_eq!(ToyScorers::parse(&s.to_text()).unwrap(), s);
        assert!(matches!(
            ToyScorers::parse("3 neutral 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(ToyScorers::parse("3 helpful x").is_err());
    }

    #[test]
    fn bt_initial_loss_is_ln2() {
        let pairs = vec![PreferencePair {
            prompt: vec![],
            chosen: ids(&[1, 2]),
            rejected: ids(&[3]),
        }];
        let m = BtRewardModel {
            net: Mlp::zeros(&[4, 3, 1], Activation::Relu),
        };
        assert!((m.loss(&pairs).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            train_bt_reward(&[], 4, &BtTrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn pairs_parse() {
        let p = parse_preference_pairs("1 2 | 3 4 | 5\n\n# c\n | 1 | 2\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].chosen, ids(&[3, 4]));
        assert!(p[1].prompt.is_empty());
        assert!(parse_preference_pairs("1 | 2 | 2").is_err());
        assert!(parse_preference_pairs("1 | 2").is_err());
    }

    #[test]
    fn bt_learns_separable_pairs() {
        // A hidden linear scorer over bag-of-tokens decides every pair.
        let v = 12;
        let mut rng = stream(9, Stream::Data);
        let w: Vec<f64> = (0..v).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let oracle = |y: &[TokenId]| -> f64 { bag_of_tokens(y, v).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum() };
        let mut pairs = Vec::new();
        while pairs.len() < 200 {
            let mut draw = || -> Vec<TokenId> {
                let n = rng.gen_range(1..8);
                (0..n).map(|_| TokenId(rng.gen_range(0..v as u32))).collect()
            };
            let (a, b) = (draw(), draw());
            let (sa, sb) = (oracle(&a), oracle(&b));
            if (sa - sb).abs() < 0.05 {
                continue;
            }
            let (chosen, rejected) = if sa > sb { (a, b) } else { (b, a) };
            pairs.push(PreferencePair {
                prompt: vec![],
                chosen,
                rejected,
            });
        }
        let cfg = BtTrainConfig {
            epochs: 300,
            lr: 0.02,
            hidden: vec![],
            batch_size: 200,
            seed: 1,
        };
        let (m, losses) = train_bt_reward(&pairs, v, &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let acc = m.accuracy(&pairs).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    proptest! {
        #[test]
        fn composite_is_linear(ar in 0.0f64..5.0, ac in 0.0f64..5.0, r1 in -10.0f64..10.0, c1 in -10.0f64..10.0, r2 in -10.0f64..10.0, c2 in -10.0f64..10.0, k in -3.0f64..3.0) {
            let f = |r, c| composite_reward(ar, ac, r, c);
            prop_assert!((f(r1 + r2, c1 + c2) - (f(r1, c1) + f(r2, c2))).abs() < 1e-9);
            prop_assert!((f(k * r1, k * c1) - k * f(r1, c1)).abs() < 1e-9);
        }

        #[test]
        fn toy_scores_match_recount(resp in prop::collection::vec(0u32..10, 0..30)) {
            let s = ToyScorers::new([(TokenId(1), 0.5), (TokenId(2), 2.0)], [(TokenId(7), 1.5)], 4.0).unwrap();
            let resp = ids(&resp);
            let mut r = 0.0;
            let mut c = 0.0;
            for t in &resp {
                if t.0 == 1 { r += 0.5 }
                if t.0 == 2 { r += 2.0 }
                if t.0 == 7 { c += 1.5 }
            }
            prop_assert_eq!(s.score(&[], &resp).unwrap(), (f64::min(r, 4.0), c));
        }

        #[test]
        fn kl_non_negative(a in prop::collection::vec(0.01f64..1.0, 1..8), b in prop::collection::vec(0.01f64..1.0, 8)) {
            let n = a.len();
            let sa: f64 = a.iter().sum();
            let sb: f64 = b[..n].iter().sum();
            let p: Vec<f64> = a.iter().map(|x| x / sa).collect();
            let q: Vec<f64> = b[..n].iter().map(|x| x / sb).collect();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }

        #[test]
        fn bt_loss_decreases_with_margin(d in -20.0f64..20.0, e in 0.01f64..5.0) {
            prop_assert!(neg_log_sigmoid(d + e) < neg_log_sigmoid(d));
        }
    }
}
