use rand::Rng;

use crate::config::{Activation, RunConfig};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, softmax_backward, Adam, Mlp};
use crate::policy::{network_dims, PolicyNet, ACCEPT};

use super::buffer::Transition;

/// Twin action-value networks with their slowly tracking targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
}

impl CriticPair {
    pub fn new(input_dim: usize, hidden: [usize; 3], activation: Activation, rng: &mut impl Rng) -> Self {
        let dims = network_dims(input_dim, hidden, 2);
        let q1 = Mlp::init(&dims, activation, rng);
        let q2 = Mlp::init(&dims, activation, rng);
        CriticPair {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
        }
    }

    /// Element-wise `min(Q1, Q2)` over both actions.
    pub fn min_online(&self, s: &[f64]) -> Result<[f64; 2]> {
        min2(&self.q1.predict(s)?, &self.q2.predict(s)?)
    }

    pub fn min_target(&self, s: &[f64]) -> Result<[f64; 2]> {
        min2(&self.target1.predict(s)?, &self.target2.predict(s)?)
    }
}

fn min2(a: &[f64], b: &[f64]) -> Result<[f64; 2]> {
    if a.len() != 2 || b.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: a.len().min(b.len()),
        });
    }
    Ok([a[0].min(b[0]), a[1].min(b[1])])
}

/// Entropy temperature, parameterized by its logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureState {
    pub log_alpha: f32,
    pub target_entropy: f64,
}

impl TemperatureState {
    pub fn new(init_alpha: f64, target_entropy: f64) -> Self {
        TemperatureState {
            log_alpha: init_alpha.ln() as f32,
            target_entropy,
        }
    }

    pub fn alpha(&self) -> f64 {
        f64::from(self.log_alpha).exp()
    }
}

/// `theta' <- tau * theta + (1 - tau) * theta'` for both target critics.
pub fn soft_update(critics: &mut CriticPair, tau: f64) -> Result<()> {
    critics.target1.soft_update_from(&critics.q1, tau)?;
    critics.target2.soft_update_from(&critics.q2, tau)
}

/// Bootstrapped value targets. Terminal transitions target their reward;
/// transitions into a forced state bootstrap from the accept value alone,
/// since the policy has no choice there.
pub fn critic_targets(
    batch: &[Transition],
    critics: &CriticPair,
    policy: &PolicyNet,
    alpha: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.reward);
            }
            let q = critics.min_target(&t.next_state)?;
            if t.next_forced {
                return Ok(t.reward + gamma * q[ACCEPT]);
            }
            let logits = policy.net.predict(&t.next_state)?;
            let p = softmax(&logits);
            let lp = log_softmax(&logits);
            let h = -(p[0] * lp[0] + p[1] * lp[1]);
            Ok(t.reward + alpha * h + gamma * (p[0] * q[0] + p[1] * q[1]))
        })
        .collect()
}

/// Critic loss and parameter gradients for fixed targets. Each head
/// regresses to the target on its own; with `paper_literal` the mean of the
/// two heads does.
pub fn critic_loss_and_grads(
    critics: &CriticPair,
    batch: &[Transition],
    targets: &[f64],
    paper_literal: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::BufferEmpty);
    }
    let mut g1 = vec![0.0; critics.q1.num_params()];
    let mut g2 = vec![0.0; critics.q2.num_params()];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let a = t.action_index();
        let (v1, c1) = critics.q1.forward(&t.state)?;
        let (v2, c2) = critics.q2.forward(&t.state)?;
        let (d1, d2) = if paper_literal {
            let r = 0.5 * (v1[a] + v2[a]) - y;
            loss += r * r;
            (r / n, r / n)
        } else {
            let (r1, r2) = (v1[a] - y, v2[a] - y);
            loss += 0.5 * (r1 * r1 + r2 * r2);
            (r1 / n, r2 / n)
        };
        let mut up = [0.0; 2];
        up[a] = d1;
        critics.q1.backward_into(&c1, &up, &mut g1)?;
        up[a] = d2;
        critics.q2.backward_into(&c2, &up, &mut g2)?;
    }
    Ok((loss / n, g1, g2))
}

pub struct CriticOptimizers {
    pub q1: Adam,
    pub q2: Adam,
}

/// One Adam step on both critic heads; returns the loss before the step.
pub fn critic_update(
    critics: &mut CriticPair,
    batch: &[Transition],
    policy: &PolicyNet,
    temperature: &TemperatureState,
    gamma: f64,
    opt: &mut CriticOptimizers,
    paper_literal: bool,
) -> Result<f64> {
    let targets = critic_targets(batch, critics, policy, temperature.alpha(), gamma)?;
    let (loss, g1, g2) = critic_loss_and_grads(critics, batch, &targets, paper_literal)?;
    opt.q1.step(critics.q1.params_mut(), &g1)?;
    opt.q2.step(critics.q2.params_mut(), &g2)?;
    Ok(loss)
}

/// Actor loss, its parameter gradient, and the mean policy entropy over the
/// states where the policy actually chooses. Forced states are skipped.
pub fn actor_loss_and_grads(
    policy: &PolicyNet,
    batch: &[Transition],
    critics: &CriticPair,
    alpha: f64,
) -> Result<(f64, Vec<f64>, Option<f64>)> {
    let free: Vec<&Transition> = batch.iter().filter(|t| !t.forced).collect();
    let mut grads = vec![0.0; policy.net.num_params()];
    if free.is_empty() {
        return Ok((0.0, grads, None));
    }
    let n = free.len() as f64;
    let mut loss = 0.0;
    let mut entropy_sum = 0.0;
    for t in free {
        let m = critics.min_online(&t.state)?;
        let (logits, cache) = policy.net.forward(&t.state)?;
        let p = softmax(&logits);
        let lp = log_softmax(&logits);
        let h = -(p[0] * lp[0] + p[1] * lp[1]);
        entropy_sum += h;
        loss += -alpha * h - (p[0] * m[0] + p[1] * m[1]);
        let gp = [(alpha * (lp[0] + 1.0) - m[0]) / n, (alpha * (lp[1] + 1.0) - m[1]) / n];
        let gz = softmax_backward(&p, &gp);
        policy.net.backward_into(&cache, &gz, &mut grads)?;
    }
    Ok((loss / n, grads, Some(entropy_sum / n)))
}

/// One Adam step on the policy. Returns the loss before the step and the
/// mean entropy of the batch's free states, if any.
pub fn actor_update(
    policy: &mut PolicyNet,
    batch: &[Transition],
    critics: &CriticPair,
    temperature: &TemperatureState,
    opt: &mut Adam,
) -> Result<(f64, Option<f64>)> {
    let (loss, grads, entropy) = actor_loss_and_grads(policy, batch, critics, temperature.alpha())?;
    if entropy.is_some() {
        opt.step(policy.net.params_mut(), &grads)?;
    }
    Ok((loss, entropy))
}

/// Gradient of the temperature loss `alpha * (H - H_target)` with respect to
/// `log alpha`.
pub fn temperature_grad(temperature: &TemperatureState, mean_entropy: f64) -> f64 {
    temperature.alpha() * (mean_entropy - temperature.target_entropy)
}

/// Mean policy entropy over the batch's free states, or `None` if all are
/// forced.
pub fn batch_entropy(policy: &PolicyNet, batch: &[Transition]) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in batch.iter().filter(|t| !t.forced) {
        let lp = log_softmax(&policy.net.predict(&t.state)?);
        sum -= lp.iter().map(|l| l.exp() * l).sum::<f64>();
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// One Adam step on `log alpha` given the batch's mean policy entropy;
/// returns the new `alpha`.
pub fn temperature_update(temperature: &mut TemperatureState, mean_entropy: f64, opt: &mut Adam) -> Result<f64> {
    let g = temperature_grad(temperature, mean_entropy);
    let mut p = [temperature.log_alpha];
    opt.step(&mut p, &[g])?;
    temperature.log_alpha = p[0];
    Ok(temperature.alpha())
}

/// Networks, temperature and optimizer state of one learner.
pub struct SacAgent {
    pub policy: PolicyNet,
    pub critics: CriticPair,
    pub temperature: TemperatureState,
    pub actor_opt: Adam,
    pub critic_opt: CriticOptimizers,
    pub alpha_opt: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: Option<f64>,
}

impl SacAgent {
    pub fn new(cfg: &RunConfig, feature_dim: usize, policy_rng: &mut impl Rng, critic_rng: &mut impl Rng) -> Self {
        let policy = PolicyNet::new(feature_dim, cfg.hidden_sizes, cfg.activation, policy_rng);
        let critics = CriticPair::new(feature_dim, cfg.hidden_sizes, cfg.activation, critic_rng);
        Self::from_parts(
            cfg,
            policy,
            critics,
            TemperatureState::new(cfg.init_alpha_h, cfg.target_entropy),
        )
    }

    pub fn from_parts(cfg: &RunConfig, policy: PolicyNet, critics: CriticPair, temperature: TemperatureState) -> Self {
        SacAgent {
            actor_opt: Adam::new(policy.net.num_params(), cfg.lr_actor),
            critic_opt: CriticOptimizers {
                q1: Adam::new(critics.q1.num_params(), cfg.lr_critic),
                q2: Adam::new(critics.q2.num_params(), cfg.lr_critic),
            },
            alpha_opt: Adam::new(1, cfg.lr_alpha),
            policy,
            critics,
            temperature,
        }
    }

    /// Critic, actor and temperature steps followed by a target soft update.
    pub fn update(&mut self, batch: &[Transition], cfg: &RunConfig) -> Result<UpdateStats> {
        let critic_loss = critic_update(
            &mut self.critics,
            batch,
            &self.policy,
            &self.temperature,
            cfg.discount,
            &mut self.critic_opt,
            cfg.paper_literal_critic_loss,
        )?;
        let (actor_loss, entropy) = actor_update(
            &mut self.policy,
            batch,
            &self.critics,
            &self.temperature,
            &mut self.actor_opt,
        )?;
        if let Some(h) = entropy {
            temperature_update(&mut self.temperature, h, &mut self.alpha_opt)?;
        }
        soft_update(&mut self.critics, cfg.tau)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha: self.temperature.alpha(),
            entropy,
        })
    }
}
