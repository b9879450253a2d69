use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use mara::checkpoint::{load_checkpoint, load_reward_model, save_reward_model, Checkpoint};
use mara::config::{load_config_with_profile, RunConfig};
use mara::dataset::PromptDataset;
use mara::diagnostics::{grad_check_suite, max_rel_err, GradCheckSpec};
use mara::eval::{acceptance_histogram, evaluate_pair_of_systems, judge_pair, parse_score_file, tally};
use mara::mdp::{parse_episode_dump, rollout, write_episode_dump, DecodeParams, Episode};
use mara::policy::{AcceptPolicy, AlwaysAccept};
use mara::refmodel::{ReferenceModel, RemoteReferenceModel, ToyBigramModel};
use mara::reward::{
    load_preference_pairs, position_kl, train_bt_reward, BtTrainConfig, ResponseScorer, RewardContext, ToyScorers,
};
use mara::rng::{stream, Stream};
use mara::sac::{train as train_sac, TrainOptions};
use mara::truncation::truncate_and_sort;
use mara::Error;

use crate::{
    EvaluateArgs, GenerateArgs, GradCheckArgs, JudgeArgs, RefModelArgs, ScorerArgs, StatsArgs, TrainArgs,
    TrainRewardArgs,
};

const BRIDGE_TIMEOUT: Duration = Duration::from_secs(30);
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A checkpoint or input that does not fit the reference model.
    Incompatible(String),
    Failed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Incompatible(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Incompatible(_) => 4,
            CliError::Failed(_) => 3,
            CliError::Core(e) => match e {
                Error::ConfigSyntax { .. }
                | Error::ConfigUnknownKey { .. }
                | Error::ConfigInvalid(_)
                | Error::Parse { .. }
                | Error::InvalidScore(_)
                | Error::EmptyDataset
                | Error::EmptyInput
                | Error::EmptyComparison => 2,
                Error::CheckpointVersion { .. }
                | Error::BridgeDimension { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidToken { .. } => 4,
                Error::Io { .. } | Error::CheckpointCorrupt(_) | Error::BridgeUnavailable(_) => 5,
                _ => 3,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn reference_model(args: &RefModelArgs, cfg: &RunConfig) -> Result<Box<dyn ReferenceModel>> {
    match (&args.ref_model, &args.endpoint) {
        (Some(path), _) => Ok(Box::new(ToyBigramModel::load(path)?.with_features(cfg.toy_features))),
        (None, Some(url)) => Ok(Box::new(RemoteReferenceModel::connect(url, BRIDGE_TIMEOUT, cfg.top_k)?)),
        (None, None) => unreachable!("clap requires one reference model source"),
    }
}

fn scorer(args: &ScorerArgs) -> Result<Arc<dyn ResponseScorer>> {
    match (&args.scorer, &args.reward_model) {
        (Some(path), _) => Ok(Arc::new(ToyScorers::load(path)?)),
        (None, Some(dir)) => Ok(Arc::new(load_reward_model(dir)?)),
        (None, None) => unreachable!("clap requires one scorer source"),
    }
}

fn prompts_for(path: &Path, model: &dyn ReferenceModel) -> Result<PromptDataset> {
    let data = PromptDataset::load(path)?;
    data.validate(&model.vocab())?;
    Ok(data)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}

/// Loads a checkpoint and confirms its networks read the model's features.
fn compatible_checkpoint(dir: &Path, reference: &RefModelArgs) -> Result<(Checkpoint, Box<dyn ReferenceModel>)> {
    let ck = load_checkpoint(dir)?;
    let model = reference_model(reference, &ck.config)?;
    let (want, have) = (ck.policy.input_dim(), model.feature_dim());
    if want != have {
        return Err(CliError::Incompatible(format!(
            "{}: policy expects {want} features but the reference model produces {have}",
            dir.display()
        )));
    }
    Ok((ck, model))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config_with_profile(&a.config, a.profile.map(Into::into))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let model = reference_model(&a.reference, &cfg)?;
    let prompts = prompts_for(&a.prompts, model.as_ref())?;
    let rewards = RewardContext::from_config(&cfg, scorer(&a.scoring)?)?;
    let out = train_sac(
        &cfg,
        &prompts,
        model.as_ref(),
        &rewards,
        &TrainOptions {
            out_dir: Some(a.out.clone()),
        },
    )?;
    println!(
        "trained {} episodes, {} micro-steps, {} updates; final checkpoint in {}",
        out.episodes,
        out.micro_steps,
        out.updates,
        a.out.join("final").display()
    );
    Ok(())
}

fn with_position_kls(
    mut ep: Episode,
    policy: &dyn AcceptPolicy,
    model: &dyn ReferenceModel,
    params: &DecodeParams,
) -> Result<Episode> {
    let mut context = ep.prompt.clone();
    let mut kls = Vec::with_capacity(ep.response.len());
    for (pos, &t) in ep.response.iter().enumerate() {
        let cs = truncate_and_sort(
            &model.next_token_distribution(&context)?,
            params.top_k,
            params.top_p,
            pos,
        )?;
        kls.push(position_kl(policy, model, &context, &cs, params.max_len)?);
        context.push(t);
    }
    ep.position_kls = kls;
    Ok(ep)
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let (ck, model) = compatible_checkpoint(&a.checkpoint, &a.reference)?;
    let prompts = prompts_for(&a.prompts, model.as_ref())?;
    let params = DecodeParams::from(&ck.config);
    let policy = &ck.policy.net;
    let mut records = Vec::with_capacity(prompts.len());
    for (i, p) in prompts.prompts.iter().enumerate() {
        let mut rng = stream(a.seed.wrapping_add(i as u64), Stream::Eval);
        let ep = rollout(p, model.as_ref(), policy, &params, None, &mut rng, a.mode.into())?;
        records.push(with_position_kls(ep, policy, model.as_ref(), &params)?.record());
    }
    write(&a.out, &write_episode_dump(&records))?;
    println!("wrote {} responses to {}", records.len(), a.out.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (ck, model) = compatible_checkpoint(&a.checkpoint, &a.reference)?;
    let baseline = match &a.baseline {
        Some(dir) => {
            let b = load_checkpoint(dir)?;
            if b.policy.input_dim() != model.feature_dim() {
                return Err(CliError::Incompatible(format!(
                    "{}: baseline expects {} features but the reference model produces {}",
                    dir.display(),
                    b.policy.input_dim(),
                    model.feature_dim()
                )));
            }
            Some(b)
        }
        None => None,
    };
    let prompts = prompts_for(&a.prompts, model.as_ref())?;
    let scorer = scorer(&a.scoring)?;
    let system_b: &dyn AcceptPolicy = match &baseline {
        Some(b) => &b.policy.net,
        None => &AlwaysAccept,
    };
    let params = DecodeParams::from(&ck.config);
    let ev = evaluate_pair_of_systems(
        &prompts.prompts,
        &ck.policy.net,
        system_b,
        model.as_ref(),
        &params,
        scorer.as_ref(),
        a.mode.into(),
        a.seed,
    )?;
    if let Some(out) = &a.out {
        write(out, &ev.report_lines())?;
    }
    let s = &ev.summary;
    println!(
        "win {} tie {} lose {} preference rate {}",
        s.n_win,
        s.n_tie,
        s.n_lose,
        s.rate_text()
    );
    Ok(())
}

pub fn judge(a: JudgeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.scores).map_err(|e| Error::Io {
        path: a.scores.clone(),
        source: e,
    })?;
    let outcomes = parse_score_file(&text)?
        .into_iter()
        .map(|[ha, xa, hb, xb]| judge_pair(ha, xa, hb, xb))
        .collect::<mara::Result<Vec<_>>>()?;
    let lines: String = outcomes.iter().map(|o| format!("{o}\n")).collect();
    match &a.out {
        Some(out) => write(out, &lines)?,
        None => print!("{lines}"),
    }
    let s = tally(outcomes)?;
    println!(
        "win {} tie {} lose {} preference rate {}",
        s.n_win,
        s.n_tie,
        s.n_lose,
        s.rate_text()
    );
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &a.episodes {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        records.extend(parse_episode_dump(&text)?);
    }
    let hist = acceptance_histogram(&records)?;
    let text = hist.to_text();
    if let Some(out) = &a.out {
        write(out, &text)?;
    }
    print!("{text}");
    println!("top-3 share {:.2}%", 100.0 * hist.cumulative_share(3));
    Ok(())
}

pub fn grad_check(a: GradCheckArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => load_config_with_profile(path, Some(a.profile.into()))?,
        None => RunConfig::for_profile(a.profile.into()),
    };
    let spec = GradCheckSpec {
        feature_dim: a.feature_dim,
        hidden: cfg.hidden_sizes,
        activation: cfg.activation,
        vocab_size: a.vocab_size,
        coords_per_tensor: a.coords,
        batch: 16,
        seed: a.seed,
    };
    let entries = grad_check_suite(&spec)?;
    for e in &entries {
        let dims: Vec<String> = e.dims.iter().map(|d| d.to_string()).collect();
        println!(
            "{:<22} dims {:<18} coords {:>5} max rel err {:.2e}",
            e.name,
            dims.join("x"),
            e.report.checked,
            e.report.max_rel_err
        );
    }
    let worst = max_rel_err(&entries);
    println!("max rel err {worst:.2e}");
    if worst >= GRAD_TOLERANCE {
        return Err(CliError::Failed(format!(
            "relative error {worst:.2e} is not below {GRAD_TOLERANCE:e}"
        )));
    }
    Ok(())
}

pub fn train_reward(a: TrainRewardArgs) -> Result<()> {
    let pairs = load_preference_pairs(&a.pairs)?;
    let cfg = BtTrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        hidden: a.hidden,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let (rm, losses) = train_bt_reward(&pairs, a.vocab_size, &cfg)?;
    save_reward_model(&rm, &a.out)?;
    println!(
        "final loss {:.4}, training accuracy {:.3}; reward model in {}",
        losses.last().copied().unwrap_or(f64::NAN),
        rm.accuracy(&pairs)?,
        a.out.display()
    );
    Ok(())
}
