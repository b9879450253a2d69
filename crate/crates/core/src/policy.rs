//! Accept-reject policies.

use rand::Rng;

use crate::config::Activation;
use crate::error::Result;
use crate::nn::{softmax, Mlp};

/// Index of the reject action in two-way network outputs.
pub const REJECT: usize = 0;
/// Index of the accept action in two-way network outputs.
pub const ACCEPT: usize = 1;

/// Anything that maps a state's feature vector to the probability of
/// accepting the head candidate.
pub trait AcceptPolicy: Send + Sync {
    fn accept_prob(&self, features: &[f64]) -> Result<f64>;
}

impl<P: AcceptPolicy + ?Sized> AcceptPolicy for &P {
    fn accept_prob(&self, features: &[f64]) -> Result<f64> {
        (**self).accept_prob(features)
    }
}

impl<P: AcceptPolicy + ?Sized> AcceptPolicy for std::sync::Arc<P> {
    fn accept_prob(&self, features: &[f64]) -> Result<f64> {
        (**self).accept_prob(features)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysAccept;

impl AcceptPolicy for AlwaysAccept {
    fn accept_prob(&self, _: &[f64]) -> Result<f64> {
        Ok(1.0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysReject;

impl AcceptPolicy for AlwaysReject {
    fn accept_prob(&self, _: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

/// Policy defined by a closure over the feature vector.
pub struct FnPolicy<F>(pub F);

impl<F> AcceptPolicy for FnPolicy<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn accept_prob(&self, features: &[f64]) -> Result<f64> {
        Ok((self.0)(features))
    }
}

/// The actor: an MLP producing `[reject, accept]` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub net: Mlp,
}

impl PolicyNet {
    pub fn new(input_dim: usize, hidden: [usize; 3], activation: Activation, rng: &mut impl Rng) -> Self {
        PolicyNet {
            net: Mlp::init(&network_dims(input_dim, hidden, 2), activation, rng),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        PolicyNet { net }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `[P(reject), P(accept)]`.
    pub fn probs(&self, features: &[f64]) -> Result<[f64; 2]> {
        let p = softmax(&self.net.predict(features)?);
        Ok([p[REJECT], p[ACCEPT]])
    }
}

impl AcceptPolicy for PolicyNet {
    fn accept_prob(&self, features: &[f64]) -> Result<f64> {
        Ok(self.probs(features)?[ACCEPT])
    }
}

impl AcceptPolicy for Mlp {
    fn accept_prob(&self, features: &[f64]) -> Result<f64> {
        Ok(softmax(&self.predict(features)?)[ACCEPT])
    }
}

/// Layer widths for the actor, critic and reward networks: three hidden
/// layers followed by a linear output head.
pub fn network_dims(input_dim: usize, hidden: [usize; 3], output_dim: usize) -> Vec<usize> {
    vec![input_dim, hidden[0], hidden[1], hidden[2], output_dim]
}
