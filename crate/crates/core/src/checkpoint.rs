//! Checkpoint directories: a text manifest plus one little-endian `f32`
//! blob per tensor.
//!
//! ```text
//! version 1
//! config top_k = 50
//! ...
//! tensor policy.layer0.weight 64 35
//! ```

use std::fs;
use std::path::Path;

use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policy::PolicyNet;
use crate::reward::BtRewardModel;
use crate::sac::{CriticPair, TemperatureState};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";

const NETS: [&str; 5] = ["policy", "critic1", "critic2", "target1", "target2"];
const LOG_ALPHA: &str = "temperature.log_alpha";
const REWARD: &str = "reward";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub policy: PolicyNet,
    pub critics: CriticPair,
    pub temperature: TemperatureState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-')
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut version = None;
    let mut config_text = String::new();
    let mut tensors: Vec<TensorEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "version" => {
                let v: u32 = rest
                    .trim()
                    .parse()
                    .map_err(|_| corrupt(format!("manifest line {}: bad version `{rest}`", i + 1)))?;
                if v > FORMAT_VERSION || v == 0 {
                    return Err(Error::CheckpointVersion {
                        found: v,
                        expected: FORMAT_VERSION,
                    });
                }
                version = Some(v);
            }
            "config" => {
                config_text.push_str(rest);
                config_text.push('\n');
            }
            "tensor" => {
                let mut f = rest.split_whitespace();
                let name = f.next().unwrap_or("");
                if !valid_name(name) {
                    return Err(corrupt(format!("manifest line {}: bad tensor name `{name}`", i + 1)));
                }
                if tensors.iter().any(|t| t.name == name) {
                    return Err(corrupt(format!("tensor `{name}` listed twice")));
                }
                let shape = f
                    .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0 && d <= 1 << 28))
                    .collect::<Option<Vec<usize>>>()
                    .ok_or_else(|| corrupt(format!("manifest line {}: bad shape", i + 1)))?;
                if shape.is_empty() || shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).is_none() {
                    return Err(corrupt(format!("manifest line {}: bad shape", i + 1)));
                }
                tensors.push(TensorEntry {
                    name: name.to_string(),
                    shape,
                });
            }
            other => return Err(corrupt(format!("manifest line {}: unknown entry `{other}`", i + 1))),
        }
    }
    let version = version.ok_or_else(|| corrupt("manifest has no version"))?;
    let config = parse_config(&config_text).map_err(|e| corrupt(format!("config snapshot: {e}")))?;
    Ok(Manifest {
        version,
        config,
        tensors,
    })
}

fn tensors_of(prefix: &str, net: &Mlp) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    net.tensor_layout()
        .into_iter()
        .map(|(name, shape, range)| (format!("{prefix}.{name}"), shape, net.params()[range].to_vec()))
        .collect()
}

fn write_dir(dir: &Path, config: &RunConfig, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("version {FORMAT_VERSION}\n");
    for line in config.to_kv_string().lines() {
        manifest.push_str(&format!("config {line}\n"));
    }
    for (name, shape, data) in tensors {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {name} {}\n", dims.join(" ")));
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(format!("{name}.f32"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text)
}

pub fn save_checkpoint(ck: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let nets = [
        &ck.policy.net,
        &ck.critics.q1,
        &ck.critics.q2,
        &ck.critics.target1,
        &ck.critics.target2,
    ];
    let mut tensors = Vec::new();
    for (prefix, net) in NETS.iter().zip(nets) {
        tensors.extend(tensors_of(prefix, net));
    }
    tensors.push((LOG_ALPHA.to_string(), vec![1], vec![ck.temperature.log_alpha]));
    write_dir(dir.as_ref(), &ck.config, &tensors)
}

/// Saves a reward model in the checkpoint layout under the `reward` prefix.
pub fn save_reward_model(rm: &BtRewardModel, dir: impl AsRef<Path>) -> Result<()> {
    let config = RunConfig {
        activation: rm.net.activation(),
        ..RunConfig::default()
    };
    write_dir(dir.as_ref(), &config, &tensors_of(REWARD, &rm.net))
}

pub fn load_reward_model(dir: impl AsRef<Path>) -> Result<BtRewardModel> {
    let dir = dir.as_ref();
    let net = load_net(dir, &read_manifest(dir)?, REWARD)?;
    if net.output_dim() != 1 {
        return Err(corrupt("reward model must have one output"));
    }
    Ok(BtRewardModel { net })
}

fn read_blob(dir: &Path, entry: &TensorEntry) -> Result<Vec<f32>> {
    let path = dir.join(format!("{}.f32", entry.name));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let want = entry.num_elements() * 4;
    if bytes.len() != want {
        return Err(corrupt(format!(
            "{}: {} bytes, manifest shape needs {want}",
            entry.name,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn load_net(dir: &Path, manifest: &Manifest, prefix: &str) -> Result<Mlp> {
    let mut dims: Vec<usize> = Vec::new();
    let mut params = Vec::new();
    for l in 0.. {
        let find = |kind: &str| {
            let name = format!("{prefix}.layer{l}.{kind}");
            manifest.tensors.iter().find(|t| t.name == name)
        };
        let Some(w) = find("weight") else { break };
        let b = find("bias").ok_or_else(|| corrupt(format!("{prefix}: layer {l} has no bias")))?;
        let [out, inp] = w.shape[..] else {
            return Err(corrupt(format!("{}: weight must be 2-dimensional", w.name)));
        };
        if b.shape != [out] {
            return Err(corrupt(format!("{}: bias shape does not match weight", b.name)));
        }
        match dims.last() {
            None => dims.push(inp),
            Some(&prev) if prev != inp => {
                return Err(corrupt(format!(
                    "{}: input width {inp} after layer of width {prev}",
                    w.name
                )))
            }
            Some(_) => {}
        }
        dims.push(out);
        params.extend(read_blob(dir, w)?);
        params.extend(read_blob(dir, b)?);
    }
    if dims.len() < 2 {
        return Err(corrupt(format!("no tensors for `{prefix}`")));
    }
    let mut net = Mlp::zeros(&dims, manifest.config.activation);
    net.set_params(&params)?;
    Ok(net)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut nets = NETS
        .iter()
        .map(|p| load_net(dir, &manifest, p))
        .collect::<Result<Vec<Mlp>>>()?
        .into_iter();
    let mut next = || nets.next().expect("one network per prefix");
    let policy = PolicyNet::from_net(next());
    let critics = CriticPair {
        q1: next(),
        q2: next(),
        target1: next(),
        target2: next(),
    };
    let input = policy.input_dim();
    for (name, net) in [
        ("critic1", &critics.q1),
        ("critic2", &critics.q2),
        ("target1", &critics.target1),
        ("target2", &critics.target2),
    ] {
        if net.dims() != critics.q1.dims() || net.input_dim() != input {
            return Err(corrupt(format!("{name} shape differs from the other networks")));
        }
    }
    if policy.net.output_dim() != 2 || critics.q1.output_dim() != 2 {
        return Err(corrupt("networks must have two outputs"));
    }
    let entry = manifest
        .tensors
        .iter()
        .find(|t| t.name == LOG_ALPHA)
        .ok_or_else(|| corrupt("missing temperature"))?;
    let alpha = read_blob(dir, entry)?;
    if alpha.len() != 1 {
        return Err(corrupt("temperature must be a single value"));
    }
    Ok(Checkpoint {
        temperature: TemperatureState {
            log_alpha: alpha[0],
            target_entropy: manifest.config.target_entropy,
        },
        config: manifest.config,
        policy,
        critics,
    })
}
