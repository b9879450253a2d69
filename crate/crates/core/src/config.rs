//! Run configuration and the flat `key = value` config file format.
//!
//! Every key is optional. Unspecified keys take the defaults of the selected
//! profile: `paper` reproduces the published hyperparameter table, `toy`
//! shrinks response length, network width and batch size so that a full run
//! finishes in minutes on one core. The profile is chosen by the `profile`
//! key (position in the file does not matter) or overridden by the caller.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Paper,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlMode {
    /// KL between the policy-induced and truncated reference distributions,
    /// charged once per position.
    #[default]
    Distributional,
    /// Per-micro-step log-ratio of accept probabilities against the
    /// reference-induced accept probability.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptOrder {
    #[default]
    Shuffled,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    /// One collector and the learner alternate on the calling thread.
    #[default]
    Sync,
    /// `n_collectors` rollout threads feed a shared buffer while the calling
    /// thread runs the learner.
    Concurrent,
}

/// Feature layout of the toy bigram reference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ToyFeatures {
    /// `[one-hot(last context token) | one-hot(candidate) | i/H | k/m | p]`
    #[default]
    Bigram,
    /// The bigram layout followed by per-token counts of the response so
    /// far, divided by H. Reward signals that depend on the whole response
    /// stay predictable from the features.
    ResponseCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub top_k: usize,
    pub top_p: f64,
    pub max_response_len: usize,
    pub kl_coeff: f64,
    pub kl_mode: KlMode,
    pub discount: f64,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub init_alpha_h: f64,
    pub target_entropy: f64,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub hidden_sizes: [usize; 3],
    pub activation: Activation,
    pub n_collectors: usize,
    pub episodes: usize,
    pub alpha_r: f64,
    pub alpha_c: f64,
    pub seed: u64,
    pub prompt_order: PromptOrder,
    pub train_mode: TrainMode,
    pub paper_literal_critic_loss: bool,
    /// Environment micro-steps per learner update.
    pub update_every: usize,
    /// Buffer fill level before the learner starts updating.
    pub warmup_steps: usize,
    /// Checkpoint cadence in episodes; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Metrics cadence in episodes.
    pub log_every: usize,
    /// Stop starting episodes once this many micro-steps have been
    /// collected; 0 means no limit.
    pub max_micro_steps: u64,
    pub toy_features: ToyFeatures,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let paper = RunConfig {
            profile: Profile::Paper,
            top_k: 50,
            top_p: 0.95,
            max_response_len: 512,
            kl_coeff: 0.1,
            kl_mode: KlMode::Distributional,
            discount: 0.99,
            batch_size: 1024,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            init_alpha_h: 0.8,
            target_entropy: 0.35,
            buffer_capacity: 1_000_000,
            tau: 0.005,
            hidden_sizes: [4096, 1024, 256],
            activation: Activation::Relu,
            n_collectors: 7,
            episodes: 20_000,
            alpha_r: 1.0,
            alpha_c: 1.0,
            seed: 0,
            prompt_order: PromptOrder::Shuffled,
            train_mode: TrainMode::Concurrent,
            paper_literal_critic_loss: false,
            update_every: 1,
            warmup_steps: 1024,
            checkpoint_every: 1000,
            log_every: 10,
            max_micro_steps: 0,
            toy_features: ToyFeatures::Bigram,
        };
        match profile {
            Profile::Paper => paper,
            Profile::Toy => RunConfig {
                profile: Profile::Toy,
                max_response_len: 16,
                batch_size: 256,
                hidden_sizes: [64, 64, 32],
                train_mode: TrainMode::Sync,
                update_every: 8,
                warmup_steps: 256,
                checkpoint_every: 0,
                lr_actor: 1e-3,
                lr_critic: 1e-3,
                lr_alpha: 1e-3,
                toy_features: ToyFeatures::ResponseCounts,
                ..paper
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn invalid(msg: String) -> Result<()> {
            Err(Error::ConfigInvalid(msg))
        }
        if self.top_k == 0 {
            return invalid("top_k must be at least 1".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return invalid(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.max_response_len == 0 {
            return invalid("max_response_len must be positive".into());
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return invalid(format!("kl_coeff must be non-negative, got {}", self.kl_coeff));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return invalid(format!("discount must lie in [0, 1], got {}", self.discount));
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive".into());
        }
        for (name, lr) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return invalid(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.init_alpha_h > 0.0 && self.init_alpha_h.is_finite()) {
            return invalid(format!("init_alpha_h must be positive, got {}", self.init_alpha_h));
        }
        if !self.target_entropy.is_finite() {
            return invalid("target_entropy must be finite".into());
        }
        if self.buffer_capacity == 0 {
            return invalid("buffer_capacity must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return invalid(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.hidden_sizes.contains(&0) {
            return invalid("hidden_sizes entries must be positive".into());
        }
        if self.n_collectors == 0 {
            return invalid("n_collectors must be at least 1".into());
        }
        if !(self.alpha_r >= 0.0 && self.alpha_c >= 0.0) {
            return invalid("alpha_r and alpha_c must be non-negative".into());
        }
        if self.alpha_r + self.alpha_c <= 0.0 {
            return invalid("alpha_r + alpha_c must be positive".into());
        }
        if self.update_every == 0 {
            return invalid("update_every must be at least 1".into());
        }
        if self.log_every == 0 {
            return invalid("log_every must be at least 1".into());
        }
        Ok(())
    }

    /// Serializes every key, in a form [`parse_config`] reads back exactly.
    pub fn to_kv_string(&self) -> String {
        let h = self.hidden_sizes;
        let entries: Vec<(&str, String)> = vec![
            ("profile", self.profile.to_string()),
            ("top_k", self.top_k.to_string()),
            ("top_p", self.top_p.to_string()),
            ("max_response_len", self.max_response_len.to_string()),
            ("kl_coeff", self.kl_coeff.to_string()),
            ("kl_mode", self.kl_mode.to_string()),
            ("discount", self.discount.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_actor", self.lr_actor.to_string()),
            ("lr_critic", self.lr_critic.to_string()),
            ("lr_alpha", self.lr_alpha.to_string()),
            ("init_alpha_h", self.init_alpha_h.to_string()),
            ("target_entropy", self.target_entropy.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("tau", self.tau.to_string()),
            ("hidden_sizes", format!("{},{},{}", h[0], h[1], h[2])),
            ("activation", self.activation.to_string()),
            ("n_collectors", self.n_collectors.to_string()),
            ("episodes", self.episodes.to_string()),
            ("alpha_r", self.alpha_r.to_string()),
            ("alpha_c", self.alpha_c.to_string()),
            ("seed", self.seed.to_string()),
            ("prompt_order", self.prompt_order.to_string()),
            ("train_mode", self.train_mode.to_string()),
            ("paper_literal_critic_loss", self.paper_literal_critic_loss.to_string()),
            ("update_every", self.update_every.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("log_every", self.log_every.to_string()),
            ("max_micro_steps", self.max_micro_steps.to_string()),
            ("toy_features", self.toy_features.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        fn num<T: FromStr>(value: &str, line: usize) -> Result<T> {
            value.parse().map_err(|_| Error::ConfigSyntax {
                line,
                message: format!("cannot parse `{value}`"),
            })
        }
        match key {
            "profile" => self.profile = num(value, line)?,
            "top_k" => self.top_k = num(value, line)?,
            "top_p" => self.top_p = num(value, line)?,
            "max_response_len" => self.max_response_len = num(value, line)?,
            "kl_coeff" => self.kl_coeff = num(value, line)?,
            "kl_mode" => self.kl_mode = num(value, line)?,
            "discount" => self.discount = num(value, line)?,
            "batch_size" => self.batch_size = num(value, line)?,
            "lr_actor" => self.lr_actor = num(value, line)?,
            "lr_critic" => self.lr_critic = num(value, line)?,
            "lr_alpha" => self.lr_alpha = num(value, line)?,
            "init_alpha_h" => self.init_alpha_h = num(value, line)?,
            "target_entropy" => self.target_entropy = num(value, line)?,
            "buffer_capacity" => self.buffer_capacity = num(value, line)?,
            "tau" => self.tau = num(value, line)?,
            "hidden_sizes" => {
                let parts = value
                    .split(',')
                    .map(|p| num::<usize>(p.trim(), line))
                    .collect::<Result<Vec<_>>>()?;
                self.hidden_sizes = parts
                    .try_into()
                    .map_err(|_| Error::ConfigInvalid("hidden_sizes must have exactly 3 entries".into()))?;
            }
            "activation" => self.activation = num(value, line)?,
            "n_collectors" => self.n_collectors = num(value, line)?,
            "episodes" => self.episodes = num(value, line)?,
            "alpha_r" => self.alpha_r = num(value, line)?,
            "alpha_c" => self.alpha_c = num(value, line)?,
            "seed" => self.seed = num(value, line)?,
            "prompt_order" => self.prompt_order = num(value, line)?,
            "train_mode" => self.train_mode = num(value, line)?,
            "paper_literal_critic_loss" => self.paper_literal_critic_loss = num(value, line)?,
            "update_every" => self.update_every = num(value, line)?,
            "warmup_steps" => self.warmup_steps = num(value, line)?,
            "checkpoint_every" => self.checkpoint_every = num(value, line)?,
            "log_every" => self.log_every = num(value, line)?,
            "max_micro_steps" => self.max_micro_steps = num(value, line)?,
            "toy_features" => self.toy_features = num(value, line)?,
            _ => {
                return Err(Error::ConfigUnknownKey {
                    key: key.to_string(),
                    line,
                })
            }
        }
        Ok(())
    }
}

/// Splits a config document into `(line, key, value)` triples.
fn entries(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out: Vec<(usize, &str, &str)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line,
            message: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::ConfigSyntax {
                line,
                message: format!("invalid key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(Error::ConfigSyntax {
                line,
                message: format!("missing value for `{key}`"),
            });
        }
        if out.iter().any(|(_, k, _)| *k == key) {
            return Err(Error::ConfigSyntax {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push((line, key, value));
    }
    Ok(out)
}

/// Parses a config document. `profile_override` wins over any `profile` key.
pub fn parse_config_with_profile(text: &str, profile_override: Option<Profile>) -> Result<RunConfig> {
    let entries = entries(text)?;
    let profile = match profile_override {
        Some(p) => p,
        None => match entries.iter().find(|(_, k, _)| *k == "profile") {
            Some(&(line, _, v)) => v.parse().map_err(|_| Error::ConfigSyntax {
                line,
                message: format!("unknown profile `{v}`"),
            })?,
            None => Profile::Paper,
        },
    };
    let mut cfg = RunConfig::for_profile(profile);
    for (line, key, value) in entries {
        if key == "profile" {
            // Still reject garbage even when overridden.
            value.parse::<Profile>().map_err(|_| Error::ConfigSyntax {
                line,
                message: format!("unknown profile `{value}`"),
            })?;
            continue;
        }
        cfg.apply(key, value, line)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_profile(text, None)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    load_config_with_profile(path, None)
}

pub fn load_config_with_profile(path: impl AsRef<Path>, profile_override: Option<Profile>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_with_profile(&text, profile_override)
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(format!("unknown value `{s}`")),
                }
            }
        }
    };
}

keyword_enum!(Profile { Paper => "paper", Toy => "toy" });
keyword_enum!(KlMode { Distributional => "distributional", Pointwise => "pointwise" });
keyword_enum!(Activation { Relu => "relu", Tanh => "tanh" });
keyword_enum!(PromptOrder { Shuffled => "shuffled", Sequential => "sequential" });
keyword_enum!(TrainMode { Sync => "sync", Concurrent => "concurrent" });
keyword_enum!(ToyFeatures { Bigram => "bigram", ResponseCounts => "response_counts" });

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_published_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.top_k, 50);
        assert_eq!(cfg.top_p, 0.95);
        assert_eq!(cfg.kl_coeff, 0.1);
        assert_eq!(cfg.discount, 0.99);
        assert_eq!(cfg.episodes, 20_000);
        assert_eq!(cfg.n_collectors, 7);
        assert_eq!(cfg.batch_size, 1024);
        assert_eq!(cfg.lr_actor, 0.0003);
        assert_eq!(cfg.lr_critic, 0.0003);
        assert_eq!(cfg.lr_alpha, 0.0003);
        assert_eq!(cfg.init_alpha_h, 0.8);
        assert_eq!(cfg.buffer_capacity, 1_000_000);
        assert_eq!(cfg.hidden_sizes, [4096, 1024, 256]);
        assert_eq!(cfg.tau, 0.005);
        assert_eq!(cfg.max_response_len, 512);
    }

    #[test]
    fn single_override() {
        let cfg = parse_config("top_k = 10\n").unwrap();
        let expected = RunConfig {
            top_k: 10,
            ..RunConfig::default()
        };
        assert_eq!(cfg, expected);
    }

    #[test]
    fn out_of_range_top_p_is_invalid() {
        assert!(matches!(parse_config("top_p = 1.5"), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_config("# header\ntop_k = 3\nbogus line\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 3, .. }), "{err}");
        let err = parse_config("top_k = three").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 1, .. }));
    }

    #[test]
    fn unknown_key() {
        let err = parse_config("\n\nlearning_rate = 0.1").unwrap_err();
        assert!(matches!(err, Error::ConfigUnknownKey { line: 3, .. }));
    }

    #[test]
    fn profile_key_applies_regardless_of_position() {
        let cfg = parse_config("top_k = 8\nprofile = toy # desk scale\n").unwrap();
        assert_eq!(cfg.profile, Profile::Toy);
        assert_eq!(cfg.max_response_len, 16);
        assert_eq!(cfg.hidden_sizes, [64, 64, 32]);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.lr_actor, 1e-3);
        assert_eq!(cfg.toy_features, ToyFeatures::ResponseCounts);
        assert_eq!(cfg.top_k, 8);
        // Table values that the toy profile does not touch.
        assert_eq!(cfg.kl_coeff, 0.1);
        assert_eq!(cfg.init_alpha_h, 0.8);
    }

    #[test]
    fn override_beats_file_profile() {
        let cfg = parse_config_with_profile("profile = toy", Some(Profile::Paper)).unwrap();
        assert_eq!(cfg.hidden_sizes, [4096, 1024, 256]);
    }

    #[test]
    fn hidden_sizes_needs_three_entries() {
        assert!(matches!(
            parse_config("hidden_sizes = 8,8"),
            Err(Error::ConfigInvalid(_))
        ));
        let cfg = parse_config("hidden_sizes = 8, 4 ,2").unwrap();
        assert_eq!(cfg.hidden_sizes, [8, 4, 2]);
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(matches!(
            parse_config("seed = 1\nseed = 2"),
            Err(Error::ConfigSyntax { line: 2, .. })
        ));
    }

    #[test]
    fn kv_string_round_trips() {
        let mut cfg = RunConfig::for_profile(Profile::Toy);
        cfg.top_p = 0.123456789;
        cfg.seed = u64::MAX;
        cfg.kl_mode = KlMode::Pointwise;
        let back = parse_config(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
