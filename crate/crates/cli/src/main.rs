mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  configuration or input error (bad flags, config file, malformed input)
  3  runtime failure (training aborted, gradient check failed)
  4  incompatible inputs (checkpoint vs reference model dimensions, token ids
     outside the vocabulary, unsupported checkpoint version)
  5  I/O failure (unreadable or unwritable files, corrupt checkpoint blobs,
     unreachable reference model server)";

/// Token-level accept-reject alignment of a frozen reference model.
#[derive(Debug, Parser)]
#[command(name = "mara", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy with soft actor-critic; writes metrics and checkpoints to --out.
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Decode prompts with a trained policy; writes one episode record per prompt.
    #[command(after_help = EXIT_CODES)]
    Generate(GenerateArgs),
    /// Compare a trained policy against a baseline and report the preference rate.
    #[command(after_help = EXIT_CODES)]
    Evaluate(EvaluateArgs),
    /// Judge pre-computed score pairs and report the preference rate.
    #[command(after_help = EXIT_CODES)]
    Judge(JudgeArgs),
    /// Acceptance-rank histogram of episode dumps.
    #[command(after_help = EXIT_CODES)]
    Stats(StatsArgs),
    /// Check every analytic gradient against finite differences.
    #[command(name = "grad-check", after_help = EXIT_CODES)]
    GradCheck(GradCheckArgs),
    /// Fit a Bradley-Terry reward model to preference pairs.
    #[command(name = "train-reward", after_help = EXIT_CODES)]
    TrainReward(TrainRewardArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Toy,
    Paper,
}

impl From<ProfileArg> for mara::config::Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Toy => mara::config::Profile::Toy,
            ProfileArg::Paper => mara::config::Profile::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Sample,
    Greedy,
}

impl From<ModeArg> for mara::mdp::DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sample => mara::mdp::DecodeMode::Sample,
            ModeArg::Greedy => mara::mdp::DecodeMode::Greedy,
        }
    }
}

/// Where next-token distributions come from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct RefModelArgs {
    /// Toy bigram reference model file.
    #[arg(long, value_name = "PATH")]
    ref_model: Option<PathBuf>,
    /// Base URL of a reference model server.
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
}

/// Where response scores come from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ScorerArgs {
    /// Toy count-based scorer file.
    #[arg(long, value_name = "PATH")]
    scorer: Option<PathBuf>,
    /// Reward model directory written by `train-reward`; its cost is zero.
    #[arg(long, value_name = "DIR")]
    reward_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Defaults the config file starts from; overrides its `profile` key.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training prompts, one whitespace-separated token-id line each.
    #[arg(long, value_name = "PATH")]
    prompts: PathBuf,
    /// Output directory for metrics.jsonl and checkpoints.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    reference: RefModelArgs,
    #[command(flatten)]
    scoring: ScorerArgs,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Prompts, one whitespace-separated token-id line each.
    #[arg(long, value_name = "PATH")]
    prompts: PathBuf,
    /// Episode dump to write (JSON lines).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: ModeArg,
    /// Base seed; prompt i decodes with seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    reference: RefModelArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint of the system under test.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Checkpoint of the comparison system; the unmodified reference model
    /// when absent.
    #[arg(long, value_name = "DIR")]
    baseline: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    prompts: PathBuf,
    /// Per-prompt report and summary (JSON lines).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    reference: RefModelArgs,
    #[command(flatten)]
    scoring: ScorerArgs,
}

#[derive(Debug, Args)]
struct JudgeArgs {
    /// Lines of `help_a harm_a help_b harm_b`.
    #[arg(long, value_name = "PATH")]
    scores: PathBuf,
    /// Per-pair outcomes, one per line.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Episode dumps written by `generate`.
    #[arg(long = "episodes", value_name = "PATH", required = true, num_args = 1..)]
    episodes: Vec<PathBuf>,
    /// Histogram text output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    /// Takes network shapes and activation from this config.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    profile: ProfileArg,
    /// Input width of the policy and critics.
    #[arg(long, default_value_t = 35)]
    feature_dim: usize,
    /// Input width of the reward model.
    #[arg(long, default_value_t = 16)]
    vocab_size: usize,
    /// Coordinates checked per tensor.
    #[arg(long, default_value_t = 64)]
    coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainRewardArgs {
    /// Lines of `prompt | chosen | rejected` token lists.
    #[arg(long, value_name = "PATH")]
    pairs: PathBuf,
    /// Token vocabulary size.
    #[arg(long)]
    vocab_size: usize,
    /// Output directory for the reward model.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Judge(a) => commands::judge(a),
        Command::Stats(a) => commands::stats(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::TrainReward(a) => commands::train_reward(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
