//! Finite-difference checks of every analytic gradient the trainer uses.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::config::Activation;
use crate::error::Result;
use crate::nn::gradcheck::{check_coordinates, GradCheckReport, DEFAULT_STEP};
use crate::nn::Mlp;
use crate::policy::PolicyNet;
use crate::reward::{BtRewardModel, PreferencePair};
use crate::rng::{stream, Stream, StreamRng};
use crate::sac::{
    actor_loss_and_grads, batch_entropy, critic_loss_and_grads, temperature_grad, CriticPair, TemperatureState,
    Transition,
};
use crate::token::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSpec {
    pub feature_dim: usize,
    pub hidden: [usize; 3],
    pub activation: Activation,
    pub vocab_size: usize,
    /// Coordinates sampled per tensor; every coordinate when the tensor is
    /// no larger.
    pub coords_per_tensor: usize,
    pub batch: usize,
    pub seed: u64,
}

impl GradCheckEntry {
    fn of(name: &str, net: &Mlp, report: GradCheckReport) -> Self {
        GradCheckEntry {
            name: name.to_string(),
            dims: net.dims().to_vec(),
            report,
        }
    }
}

fn coords(net: &Mlp, per_tensor: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut out = Vec::new();
    for (_, _, range) in net.tensor_layout() {
        let n = range.len();
        if n <= per_tensor {
            out.extend(range);
        } else {
            out.extend(sample(rng, n, per_tensor).into_iter().map(|i| range.start + i));
        }
    }
    out
}

fn random_batch(n: usize, dim: usize, rng: &mut StreamRng) -> Vec<Transition> {
    (0..n)
        .map(|i| {
            let s: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s2: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Transition {
                state: Arc::from(s),
                accept: rng.gen(),
                forced: i % 7 == 6,
                reward: rng.gen_range(-1.0..1.0),
                next_state: Arc::from(s2),
                next_forced: false,
                done: rng.gen_bool(0.2),
            }
        })
        .collect()
}

fn check_net(net: &Mlp, analytic: &[f64], coords: Vec<usize>, loss: impl Fn(&Mlp) -> f64) -> GradCheckReport {
    let mut params = net.params().to_vec();
    let mut probe = net.clone();
    check_coordinates(&mut params, analytic, coords, DEFAULT_STEP, |p| {
        probe.set_params(p).expect("same shape");
        loss(&probe)
    })
}

/// Checks the actor loss, the temperature loss, both critic losses, the
/// pairwise reward loss and a plain network output against central finite
/// differences.
pub fn grad_check_suite(spec: &GradCheckSpec) -> Result<Vec<GradCheckEntry>> {
    let mut rng = stream(spec.seed, Stream::Eval);
    let d = spec.feature_dim;
    let batch = random_batch(spec.batch.max(1), d, &mut rng);
    let policy = PolicyNet::new(
        d,
        spec.hidden,
        spec.activation,
        &mut stream(spec.seed, Stream::PolicyInit),
    );
    let critics = CriticPair::new(
        d,
        spec.hidden,
        spec.activation,
        &mut stream(spec.seed, Stream::CriticInit),
    );
    let alpha = 0.3;
    let mut out = Vec::new();

    let (_, g, _) = actor_loss_and_grads(&policy, &batch, &critics, alpha)?;
    let c = coords(&policy.net, spec.coords_per_tensor, &mut rng);
    let r = check_net(&policy.net, &g, c, |net| {
        actor_loss_and_grads(&PolicyNet::from_net(net.clone()), &batch, &critics, alpha)
            .expect("shapes match")
            .0
    });
    out.push(GradCheckEntry::of("actor", &policy.net, r));

    let mean_entropy = batch_entropy(&policy, &batch)?.unwrap_or(0.0);
    let temp = TemperatureState::new(rng.gen_range(0.05..2.0), rng.gen_range(0.1..0.6));
    let mut p = [temp.log_alpha];
    let r = check_coordinates(
        &mut p,
        &[temperature_grad(&temp, mean_entropy)],
        [0],
        DEFAULT_STEP,
        |p| f64::from(p[0]).exp() * (mean_entropy - temp.target_entropy),
    );
    out.push(GradCheckEntry {
        name: "temperature".into(),
        dims: vec![1],
        report: r,
    });

    let targets: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    for (name, literal) in [("critic", false), ("critic.paper_literal", true)] {
        let (_, g1, _) = critic_loss_and_grads(&critics, &batch, &targets, literal)?;
        let c = coords(&critics.q1, spec.coords_per_tensor, &mut rng);
        let r = check_net(&critics.q1, &g1, c, |net| {
            let mut cp = critics.clone();
            cp.q1 = net.clone();
            critic_loss_and_grads(&cp, &batch, &targets, literal)
                .expect("shapes match")
                .0
        });
        out.push(GradCheckEntry::of(name, &critics.q1, r));
    }

    let v = spec.vocab_size;
    let pairs: Vec<PreferencePair> = (0..spec.batch.max(1))
        .map(|_| {
            let mut draw = || -> Vec<TokenId> {
                let n = rng.gen_range(1..6);
                (0..n).map(|_| TokenId(rng.gen_range(0..v as u32))).collect()
            };
            PreferencePair {
                prompt: vec![],
                chosen: draw(),
                rejected: draw(),
            }
        })
        .collect();
    let mut dims = vec![v];
    dims.extend(spec.hidden);
    dims.push(1);
    let rm = BtRewardModel {
        net: Mlp::init(&dims, spec.activation, &mut stream(spec.seed, Stream::Data)),
    };
    let g = bt_loss_grads(&rm, &pairs)?;
    let c = coords(&rm.net, spec.coords_per_tensor, &mut rng);
    let r = check_net(&rm.net, &g, c, |net| {
        BtRewardModel { net: net.clone() }
            .loss(&pairs)
            .expect("pairs non-empty")
    });
    out.push(GradCheckEntry::of("reward_model", &rm.net, r));

    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = [0.7, -1.3];
    let (_, cache) = policy.net.forward(&x)?;
    let (g, _) = policy.net.backward(&cache, &w)?;
    let c = coords(&policy.net, spec.coords_per_tensor, &mut rng);
    let r = check_net(&policy.net, &g, c, |net| {
        let y = net.predict(&x).expect("shape");
        w[0] * y[0] + w[1] * y[1]
    });
    out.push(GradCheckEntry::of("network_output", &policy.net, r));

    Ok(out)
}

fn bt_loss_grads(rm: &BtRewardModel, pairs: &[PreferencePair]) -> Result<Vec<f64>> {
    use crate::reward::bag_of_tokens;
    let mut grads = vec![0.0; rm.net.num_params()];
    let n = pairs.len() as f64;
    for p in pairs {
        let (sw, cw) = rm.net.forward(&bag_of_tokens(&p.chosen, rm.vocab_size())?)?;
        let (sl, cl) = rm.net.forward(&bag_of_tokens(&p.rejected, rm.vocab_size())?)?;
        let d = sw[0] - sl[0];
        let g = -1.0 / (1.0 + d.exp()) / n;
        rm.net.backward_into(&cw, &[g], &mut grads)?;
        rm.net.backward_into(&cl, &[-g], &mut grads)?;
    }
    Ok(grads)
}

pub fn max_rel_err(entries: &[GradCheckEntry]) -> f64 {
    entries.iter().map(|e| e.report.max_rel_err).fold(0.0, f64::max)
}
