//! HTTP client for a served language model.
//!
//! Protocol (UTF-8 JSON over HTTP/1.1):
//!
//! * `GET /handshake` returns
//!   `{"vocab_size", "eos_id", "feature_dim", "model_name", "max_context"}`.
//! * `POST /forward` with `{"context": [ids], "k": n}` returns
//!   `{"topk": [{"id", "logprob"}], "hidden": [floats]}`, top-k sorted by
//!   descending log-probability and `hidden` the final-layer state at the
//!   last input position.

use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{FeatureQuery, ReferenceModel};
use crate::error::{Error, Result};
use crate::token::{TokenId, Vocab};

const MAX_BODY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub vocab_size: usize,
    pub eos_id: u32,
    pub feature_dim: usize,
    pub model_name: String,
    pub max_context: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub id: u32,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardReply {
    pub topk: Vec<TopEntry>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ForwardRequest<'a> {
    context: &'a [u32],
    k: usize,
}

pub fn decode_handshake(body: &[u8]) -> Result<Handshake> {
    let hs: Handshake = serde_json::from_slice(body).map_err(|e| Error::BridgeProtocol(format!("handshake: {e}")))?;
    if hs.vocab_size < 2 {
        return Err(Error::BridgeProtocol(format!(
            "handshake vocab_size {} too small",
            hs.vocab_size
        )));
    }
    if hs.eos_id as usize >= hs.vocab_size {
        return Err(Error::BridgeProtocol(format!(
            "handshake eos_id {} outside vocabulary",
            hs.eos_id
        )));
    }
    if hs.feature_dim == 0 {
        return Err(Error::BridgeProtocol("handshake feature_dim is 0".into()));
    }
    Ok(hs)
}

/// Decodes and validates a `/forward` reply against the handshake and the
/// requested `k`.
pub fn decode_forward_reply(body: &[u8], hs: &Handshake, k: usize) -> Result<ForwardReply> {
    let reply: ForwardReply =
        serde_json::from_slice(body).map_err(|e| Error::BridgeProtocol(format!("forward reply: {e}")))?;
    if reply.topk.is_empty() {
        return Err(Error::BridgeProtocol("empty top-k list".into()));
    }
    let limit = k.min(hs.vocab_size);
    if reply.topk.len() > limit {
        return Err(Error::BridgeProtocol(format!(
            "{} top-k entries for k = {limit}",
            reply.topk.len()
        )));
    }
    let mut seen = std::collections::HashSet::with_capacity(reply.topk.len());
    for e in &reply.topk {
        if e.id as usize >= hs.vocab_size {
            return Err(Error::BridgeProtocol(format!("token id {} outside vocabulary", e.id)));
        }
        if !seen.insert(e.id) {
            return Err(Error::BridgeProtocol(format!("duplicate token id {}", e.id)));
        }
        if !e.logprob.is_finite() || e.logprob > 1e-6 {
            return Err(Error::BridgeProtocol(format!("invalid logprob {}", e.logprob)));
        }
    }
    if reply.topk.windows(2).any(|w| w[1].logprob > w[0].logprob) {
        return Err(Error::BridgeProtocol("top-k not sorted by logprob".into()));
    }
    if reply.hidden.len() != hs.feature_dim {
        return Err(Error::BridgeDimension {
            expected: hs.feature_dim,
            found: reply.hidden.len(),
        });
    }
    if reply.hidden.iter().any(|h| !h.is_finite()) {
        return Err(Error::BridgeProtocol("non-finite hidden state".into()));
    }
    Ok(reply)
}

/// Exponentiates the returned log-probabilities, leaves all other tokens at
/// zero, and renormalizes.
pub(crate) fn reply_distribution(reply: &ForwardReply, vocab_size: usize) -> Result<Vec<f64>> {
    let mut dist = vec![0.0; vocab_size];
    let mut total = 0.0;
    for e in &reply.topk {
        let p = e.logprob.exp();
        dist[e.id as usize] = p;
        total += p;
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::BridgeProtocol("top-k mass underflows to zero".into()));
    }
    dist.iter_mut().for_each(|p| *p /= total);
    Ok(dist)
}

/// Reference model backed by a remote model server. Each instance owns its
/// own connection state; use [`ReferenceModel::fork`] for other threads.
#[derive(Debug)]
pub struct RemoteReferenceModel {
    endpoint: String,
    timeout: Duration,
    agent: ureq::Agent,
    handshake: Handshake,
    vocab: Vocab,
    request_k: usize,
}

impl RemoteReferenceModel {
    /// Connects and performs the handshake. `request_k` is the top-k size
    /// asked of the server; it should be at least the run's `top_k`.
    pub fn connect(endpoint: &str, timeout: Duration, request_k: usize) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent = build_agent(timeout);
        let body = get(&agent, &format!("{endpoint}/handshake"))?;
        let handshake = decode_handshake(&body)?;
        let vocab = Vocab::with_eos(handshake.vocab_size, TokenId(handshake.eos_id))
            .map_err(|e| Error::BridgeProtocol(e.to_string()))?;
        Ok(RemoteReferenceModel {
            endpoint,
            timeout,
            agent,
            handshake,
            vocab,
            request_k: request_k.max(1),
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn forward(&self, context: &[TokenId], k: usize) -> Result<ForwardReply> {
        let ids: Vec<u32> = context.iter().map(|t| t.0).collect();
        let req = ForwardRequest { context: &ids, k };
        let payload = serde_json::to_vec(&req).expect("request serializes");
        let resp = self
            .agent
            .post(&format!("{}/forward", self.endpoint))
            .set("Content-Type", "application/json")
            .send_bytes(&payload)
            .map_err(map_ureq)?;
        let body = read_body(resp)?;
        decode_forward_reply(&body, &self.handshake, k)
    }
}

fn build_agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout_connect(timeout)
        .timeout(timeout)
        .build()
}

fn get(agent: &ureq::Agent, url: &str) -> Result<Vec<u8>> {
    let resp = agent.get(url).call().map_err(map_ureq)?;
    read_body(resp)
}

fn read_body(resp: ureq::Response) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    resp.into_reader()
        .take(MAX_BODY_BYTES)
        .read_to_end(&mut body)
        .map_err(|e| Error::BridgeUnavailable(format!("reading reply: {e}")))?;
    Ok(body)
}

fn map_ureq(err: ureq::Error) -> Error {
    match err {
        ureq::Error::Status(503, _) => Error::BridgeUnavailable("server is still loading (503)".into()),
        ureq::Error::Status(code, resp) => Error::BridgeProtocol(format!("HTTP {code} from {}", resp.get_url())),
        ureq::Error::Transport(t) => Error::BridgeUnavailable(t.to_string()),
    }
}

impl ReferenceModel for RemoteReferenceModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn feature_dim(&self) -> usize {
        self.handshake.feature_dim
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_all(context)?;
        let reply = self.forward(context, self.request_k)?;
        reply_distribution(&reply, self.handshake.vocab_size)
    }

    /// Hidden state of the context with the candidate appended; the local
    /// position/rank/probability fields of the query are not used.
    fn context_features(&self, context: &[TokenId], query: &FeatureQuery) -> Result<Vec<f64>> {
        self.vocab.check_all(context)?;
        self.vocab.check(query.candidate)?;
        let mut ctx = context.to_vec();
        ctx.push(query.candidate);
        Ok(self.forward(&ctx, 1)?.hidden)
    }

    fn fork(&self) -> Result<Box<dyn ReferenceModel>> {
        Ok(Box::new(RemoteReferenceModel {
            endpoint: self.endpoint.clone(),
            timeout: self.timeout,
            agent: build_agent(self.timeout),
            handshake: self.handshake.clone(),
            vocab: self.vocab,
            request_k: self.request_k,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(feature_dim: usize) -> Handshake {
        Handshake {
            vocab_size: 8,
            eos_id: 7,
            feature_dim,
            model_name: "test".into(),
            max_context: 64,
        }
    }

    #[test]
    fn handshake_validation() {
        let ok = br#"{"vocab_size":8,"eos_id":7,"feature_dim":4,"model_name":"m","max_context":32}"#;
        assert_eq!(decode_handshake(ok).unwrap().feature_dim, 4);
        let bad_eos = br#"{"vocab_size":8,"eos_id":8,"feature_dim":4,"model_name":"m","max_context":32}"#;
        assert!(matches!(decode_handshake(bad_eos), Err(Error::BridgeProtocol(_))));
        assert!(matches!(decode_handshake(b"{}"), Err(Error::BridgeProtocol(_))));
        assert!(matches!(decode_handshake(b"\xff"), Err(Error::BridgeProtocol(_))));
    }

    #[test]
    fn hidden_length_must_match_handshake() {
        let hidden: Vec<f64> = vec![0.5; 4095];
        let body = serde_json::to_vec(&ForwardReply {
            topk: vec![TopEntry { id: 1, logprob: -0.1 }],
            hidden,
        })
        .unwrap();
        assert!(matches!(
            decode_forward_reply(&body, &hs(4096), 5),
            Err(Error::BridgeDimension {
                expected: 4096,
                found: 4095
            })
        ));
    }

    #[test]
    fn reply_schema_checks() {
        let h = hs(2);
        let unsorted = br#"{"topk":[{"id":1,"logprob":-2.0},{"id":2,"logprob":-1.0}],"hidden":[0,0]}"#;
        assert!(matches!(
            decode_forward_reply(unsorted, &h, 5),
            Err(Error::BridgeProtocol(_))
        ));
        let too_many = br#"{"topk":[{"id":1,"logprob":-1.0},{"id":2,"logprob":-2.0}],"hidden":[0,0]}"#;
        assert!(matches!(
            decode_forward_reply(too_many, &h, 1),
            Err(Error::BridgeProtocol(_))
        ));
        let dup = br#"{"topk":[{"id":1,"logprob":-1.0},{"id":1,"logprob":-2.0}],"hidden":[0,0]}"#;
        assert!(matches!(
            decode_forward_reply(dup, &h, 5),
            Err(Error::BridgeProtocol(_))
        ));
        let out_of_vocab = br#"{"topk":[{"id":9,"logprob":-1.0}],"hidden":[0,0]}"#;
        assert!(matches!(
            decode_forward_reply(out_of_vocab, &h, 5),
            Err(Error::BridgeProtocol(_))
        ));
        let missing = br#"{"topk":[{"id":1,"logprob":-1.0}]}"#;
        assert!(matches!(
            decode_forward_reply(missing, &h, 5),
            Err(Error::BridgeProtocol(_))
        ));
    }

    #[test]
    fn truncated_reply_is_renormalized() {
        let reply = ForwardReply {
            topk: vec![
                TopEntry {
                    id: 3,
                    logprob: 0.6f64.ln(),
                },
                TopEntry {
                    id: 0,
                    logprob: 0.2f64.ln(),
                },
            ],
            hidden: vec![],
        };
        let d = reply_distribution(&reply, 5).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d[3] - 0.75).abs() < 1e-12);
        assert!((d[0] - 0.25).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn unreachable_endpoint() {
        let start = std::time::Instant::now();
        let err = RemoteReferenceModel::connect("http://127.0.0.1:1", Duration::from_secs(2), 50).unwrap_err();
        assert!(matches!(err, Error::BridgeUnavailable(_)), "{err}");
        assert!(start.elapsed() < Duration::from_secs(5));
    }
}
