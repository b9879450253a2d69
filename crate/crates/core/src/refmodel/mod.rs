//! The frozen reference model: next-token distributions plus the feature
//! vector the accept-reject policy reads.

mod remote;
mod toy;

pub use crate::config::ToyFeatures;
pub use remote::{decode_forward_reply, decode_handshake, ForwardReply, Handshake, RemoteReferenceModel, TopEntry};
pub use toy::ToyBigramModel;

use crate::error::Result;
use crate::token::{TokenId, Vocab};

/// What the policy is asked about: the head candidate at a position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureQuery {
    pub candidate: TokenId,
    /// Number of tokens generated so far (0-based position).
    pub position: usize,
    pub max_len: usize,
    /// 1-based rank of the candidate in its set.
    pub rank: usize,
    pub set_size: usize,
    pub ref_prob: f64,
}

pub trait ReferenceModel: Send + Sync {
    fn vocab(&self) -> Vocab;

    fn feature_dim(&self) -> usize;

    /// Full-vocabulary next-token distribution given prompt plus generated
    /// prefix.
    fn next_token_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>>;

    fn context_features(&self, context: &[TokenId], query: &FeatureQuery) -> Result<Vec<f64>>;

    /// An independent handle for another worker thread.
    fn fork(&self) -> Result<Box<dyn ReferenceModel>>;
}

impl<M: ReferenceModel + ?Sized> ReferenceModel for Box<M> {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn next_token_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_token_distribution(context)
    }
    fn context_features(&self, context: &[TokenId], query: &FeatureQuery) -> Result<Vec<f64>> {
        (**self).context_features(context, query)
    }
    fn fork(&self) -> Result<Box<dyn ReferenceModel>> {
        (**self).fork()
    }
}

/// Log-probability of `continuation` after `context`, factorized token by
/// token. Returns negative infinity when any factor is zero.
pub fn sequence_log_prob(model: &dyn ReferenceModel, context: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
    let vocab = model.vocab();
    vocab.check_all(context)?;
    vocab.check_all(continuation)?;
    let mut ctx = context.to_vec();
    let mut total = 0.0;
    for &tok in continuation {
        let dist = model.next_token_distribution(&ctx)?;
        let p = dist[tok.index()];
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += p.ln();
        ctx.push(tok);
    }
    Ok(total)
}
