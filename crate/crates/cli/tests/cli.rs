use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mara::dataset::PromptDataset;
use mara::mdp::{rollout, write_episode_dump, DecodeMode, DecodeParams};
use mara::policy::AlwaysAccept;
use mara::refmodel::ToyBigramModel;
use mara::reward::ToyScorers;
use mara::rng::{stream, Stream};
use mara::{TokenId, Vocab};

const CONFIG: &str = "\
profile = toy
episodes = 24
max_response_len = 4
hidden_sizes = 8, 8, 8
batch_size = 16
warmup_steps = 16
log_every = 6
";

fn mara(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mara")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        f.write("config.txt", CONFIG);
        f.write("model8.txt", &model(8).to_text());
        f.write("model12.txt", &model(12).to_text());
        let scorer = ToyScorers::new([(TokenId(2), 1.0)], [(TokenId(5), 1.0)], 3.0).unwrap();
        f.write("scorer.txt", &scorer.to_text());
        let vocab = Vocab::with_eos(8, TokenId(0)).unwrap();
        let prompts = PromptDataset::random("p", 6, 3, &vocab, &mut stream(2, Stream::Data));
        f.write("prompts.txt", &prompts.to_text());
        f.write("empty.txt", "");
        f
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.root.join(name), text).unwrap();
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (config, prompts, model, scorer, out) = (
            self.path("config.txt"),
            self.path("prompts.txt"),
            self.path("model8.txt"),
            self.path("scorer.txt"),
            self.path(out),
        );
        let mut args = vec![
            "train",
            "--config",
            &config,
            "--prompts",
            &prompts,
            "--ref-model",
            &model,
            "--scorer",
            &scorer,
            "--out",
            &out,
        ];
        args.extend(extra);
        mara(&args)
    }
}

fn model(v: usize) -> ToyBigramModel {
    ToyBigramModel::random(
        Vocab::with_eos(v, TokenId(0)).unwrap(),
        1.5,
        &mut stream(1, Stream::Data),
    )
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn every_subcommand_documents_flags_and_exit_codes() {
    for sub in [
        "train",
        "generate",
        "evaluate",
        "judge",
        "stats",
        "grad-check",
        "train-reward",
    ] {
        let out = mara(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        let text = stdout(&out);
        assert!(text.contains("--"), "{sub}: {text}");
        assert!(text.contains("Exit codes"), "{sub}: {text}");
    }
    assert_eq!(code(&mara(&["--help"])), 0);
}

#[test]
fn usage_errors_exit_2() {
    let f = Fixture::new();
    let out = mara(&[
        "train",
        "--prompts",
        &f.path("prompts.txt"),
        "--ref-model",
        &f.path("model8.txt"),
        "--scorer",
        &f.path("scorer.txt"),
        "--out",
        &f.path("o"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(code(&mara(&["judge", "--scores", "x", "--bogus"])), 2);
    assert_eq!(code(&mara(&[])), 2);
    assert_eq!(code(&mara(&["frobnicate"])), 2);

    f.write("bad.txt", "learning_rate = 3\n");
    let out = mara(&[
        "train",
        "--config",
        &f.path("bad.txt"),
        "--prompts",
        &f.path("prompts.txt"),
        "--ref-model",
        &f.path("model8.txt"),
        "--scorer",
        &f.path("scorer.txt"),
        "--out",
        &f.path("o"),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn missing_input_file_exits_5() {
    let f = Fixture::new();
    let out = mara(&["judge", "--scores", &f.path("nope.txt")]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn train_generate_evaluate_pipeline() {
    let f = Fixture::new();
    for run in ["a", "b"] {
        let out = f.train(run, &["--profile", "toy", "--seed", "7"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(
        read(f.root.join("a/metrics.jsonl")),
        read(f.root.join("b/metrics.jsonl"))
    );
    let ck = f.path("a/final");

    let gen = |out: &str, prompts: &str, model: &str| {
        mara(&[
            "generate",
            "--checkpoint",
            &ck,
            "--prompts",
            &f.path(prompts),
            "--ref-model",
            &f.path(model),
            "--out",
            &f.path(out),
            "--mode",
            "greedy",
        ])
    };
    for out in ["g1.jsonl", "g2.jsonl"] {
        let o = gen(out, "prompts.txt", "model8.txt");
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let dump = read(f.root.join("g1.jsonl"));
    assert_eq!(dump, read(f.root.join("g2.jsonl")));
    let records = mara::mdp::parse_episode_dump(&String::from_utf8(dump).unwrap()).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.position_kl.len() == r.response.len()));

    let o = gen("empty.jsonl", "empty.txt", "model8.txt");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read(f.root.join("empty.jsonl")).is_empty());

    let o = gen("mismatch.jsonl", "prompts.txt", "model12.txt");
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!f.root.join("mismatch.jsonl").exists());

    let o = mara(&["stats", "--episodes", &f.path("g1.jsonl")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("top-3 share"));

    let o = mara(&[
        "evaluate",
        "--checkpoint",
        &ck,
        "--prompts",
        &f.path("prompts.txt"),
        "--ref-model",
        &f.path("model8.txt"),
        "--scorer",
        &f.path("scorer.txt"),
        "--out",
        &f.path("eval.jsonl"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("preference rate"));
    let report = String::from_utf8(read(f.root.join("eval.jsonl"))).unwrap();
    assert_eq!(report.lines().count(), 7);
}

#[test]
fn judge_reports_outcomes_and_rate() {
    let f = Fixture::new();
    f.write("scores.txt", "2 3 1 1\n");
    let out = mara(&["judge", "--scores", &f.path("scores.txt")]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("win\n"), "{text}");
    assert!(text.contains("+100.00%"), "{text}");
}

#[test]
fn stats_on_always_accept_dump() {
    let f = Fixture::new();
    let m = model(8);
    let params = DecodeParams {
        top_k: 5,
        top_p: 0.9,
        max_len: 5,
    };
    let records: Vec<_> = (1..6)
        .map(|t| {
            rollout(
                &[TokenId(t)],
                &m,
                &AlwaysAccept,
                &params,
                None,
                &mut stream(t.into(), Stream::Eval),
                DecodeMode::Sample,
            )
            .unwrap()
            .record()
        })
        .collect();
    f.write("dump.jsonl", &write_episode_dump(&records));
    let out = mara(&[
        "stats",
        "--episodes",
        &f.path("dump.jsonl"),
        "--out",
        &f.path("hist.txt"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("top-3 share 100.00%"), "{}", stdout(&out));
    let hist = fs::read_to_string(f.root.join("hist.txt")).unwrap();
    assert!(hist.starts_with("1 1\n") || hist.starts_with("1 1.0"), "{hist}");
}

#[test]
fn grad_check_default_shapes_pass() {
    let out = mara(&["grad-check", "--coords", "16"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("max rel err"));
}

#[test]
fn train_reward_then_score_with_it() {
    let f = Fixture::new();
    let pairs: String = (0..40)
        .map(|i| format!("{} | 2 2 {} | 5 5 {}\n", 1 + i % 7, 1 + i % 3, 1 + i % 3))
        .collect();
    f.write("pairs.txt", &pairs);
    let out = mara(&[
        "train-reward",
        "--pairs",
        &f.path("pairs.txt"),
        "--vocab-size",
        "8",
        "--out",
        &f.path("rm"),
        "--epochs",
        "30",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("training accuracy 1.000"), "{}", stdout(&out));
    let rm = mara::checkpoint::load_reward_model(f.root.join("rm")).unwrap();
    assert!(rm.score_one(&[TokenId(2)]).unwrap() > rm.score_one(&[TokenId(5)]).unwrap());

    let out = f.train("withrm", &["--seed", "1"]);
    assert_eq!(code(&out), 0);
    let (config, prompts, model, rm, o) = (
        f.path("config.txt"),
        f.path("prompts.txt"),
        f.path("model8.txt"),
        f.path("rm"),
        f.path("t2"),
    );
    let out = mara(&[
        "train",
        "--config",
        &config,
        "--prompts",
        &prompts,
        "--ref-model",
        &model,
        "--reward-model",
        &rm,
        "--out",
        &o,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
