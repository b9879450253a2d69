use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{PromptOrder, RunConfig, TrainMode};
use crate::dataset::{PromptDataset, PromptSchedule};
use crate::error::{Error, Result};
use crate::mdp::{rollout, DecodeMode, DecodeParams, Episode};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::nn::ParamSnapshot;
use crate::refmodel::ReferenceModel;
use crate::reward::RewardContext;
use crate::rng::{stream, Stream, StreamRng};

use super::buffer::{episode_transitions, ReplayBuffer};
use super::update::{SacAgent, UpdateStats};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Receives `metrics.jsonl`, periodic `checkpoint-<episode>` directories
    /// and the `final` checkpoint.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: u64,
    /// Transitions generated, one per micro-step.
    pub micro_steps: u64,
    pub updates: u64,
    /// Version of the last published parameter snapshot.
    pub snapshot_version: u64,
    /// Transitions the collectors report having pushed.
    pub collector_pushes: u64,
}

#[derive(Debug, Clone, Copy)]
struct EpisodeSummary {
    terminal_reward: f64,
    kl: f64,
}

impl EpisodeSummary {
    fn of(ep: &Episode) -> Self {
        EpisodeSummary {
            terminal_reward: ep.terminal_reward.unwrap_or(0.0),
            kl: ep.position_kls.iter().sum(),
        }
    }
}

#[derive(Debug, Default)]
struct Window {
    episodes: u64,
    reward: f64,
    kl: f64,
    updates: u64,
    actor_loss: f64,
    critic_loss: f64,
}

struct Learner<'a> {
    cfg: &'a RunConfig,
    agent: SacAgent,
    sample_rng: StreamRng,
    updates: u64,
    episodes: u64,
    window: Window,
    metrics: Vec<MetricsRecord>,
    writer: Option<MetricsWriter>,
    out_dir: Option<&'a Path>,
    start: Option<Instant>,
}

impl<'a> Learner<'a> {
    fn new(cfg: &'a RunConfig, agent: SacAgent, out_dir: Option<&'a Path>, timed: bool) -> Result<Self> {
        let writer = match out_dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let path = d.join("metrics.jsonl");
                if path.exists() {
                    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
                Some(MetricsWriter::create(path)?)
            }
            None => None,
        };
        Ok(Learner {
            cfg,
            agent,
            sample_rng: stream(cfg.seed, Stream::BufferSampling),
            updates: 0,
            episodes: 0,
            window: Window::default(),
            metrics: Vec::new(),
            writer,
            out_dir,
            start: timed.then(Instant::now),
        })
    }

    /// Updates owed once `pushed` transitions have been collected.
    fn due(&self, pushed: u64) -> u64 {
        pushed.saturating_sub(self.cfg.warmup_steps as u64) / self.cfg.update_every.max(1) as u64
    }

    fn apply(&mut self, batch: &[super::Transition]) -> Result<UpdateStats> {
        let stats = self.agent.update(batch, self.cfg)?;
        self.updates += 1;
        self.window.updates += 1;
        self.window.actor_loss += stats.actor_loss;
        self.window.critic_loss += stats.critic_loss;
        Ok(stats)
    }

    fn finish_episode(&mut self, s: EpisodeSummary, buffer_size: usize) -> Result<()> {
        self.episodes += 1;
        self.window.episodes += 1;
        self.window.reward += s.terminal_reward;
        self.window.kl += s.kl;
        let every = self.cfg.log_every as u64;
        if every > 0 && self.episodes.is_multiple_of(every) {
            self.log(buffer_size)?;
        }
        let every = self.cfg.checkpoint_every as u64;
        if every > 0 && self.episodes.is_multiple_of(every) {
            if let Some(d) = self.out_dir {
                save_checkpoint(&self.checkpoint(), d.join(format!("checkpoint-{:06}", self.episodes)))?;
            }
        }
        Ok(())
    }

    fn log(&mut self, buffer_size: usize) -> Result<()> {
        let w = std::mem::take(&mut self.window);
        if w.episodes == 0 {
            return Ok(());
        }
        let per_update = |x: f64| (w.updates > 0).then(|| x / w.updates as f64);
        let rec = MetricsRecord {
            step: self.updates,
            episode: self.episodes,
            mean_terminal_reward: w.reward / w.episodes as f64,
            mean_kl: w.kl / w.episodes as f64,
            alpha_h: self.agent.temperature.alpha(),
            actor_loss: per_update(w.actor_loss),
            critic_loss: per_update(w.critic_loss),
            buffer_size: buffer_size as u64,
            wallclock_s: self.start.map_or(0.0, |t| t.elapsed().as_secs_f64()),
        };
        if let Some(w) = &mut self.writer {
            w.write(&rec)?;
        }
        self.metrics.push(rec);
        Ok(())
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            policy: self.agent.policy.clone(),
            critics: self.agent.critics.clone(),
            temperature: self.agent.temperature.clone(),
        }
    }

    fn finish(
        mut self,
        buffer_size: usize,
        micro_steps: u64,
        snapshot_version: u64,
        collector_pushes: u64,
    ) -> Result<TrainOutcome> {
        self.log(buffer_size)?;
        let checkpoint = self.checkpoint();
        if let Some(d) = self.out_dir {
            save_checkpoint(&checkpoint, d.join("final"))?;
        }
        Ok(TrainOutcome {
            checkpoint,
            metrics: self.metrics,
            episodes: self.episodes,
            micro_steps,
            updates: self.updates,
            snapshot_version,
            collector_pushes,
        })
    }
}

/// Trains an accept-reject policy with discrete soft actor-critic.
pub fn train(
    cfg: &RunConfig,
    dataset: &PromptDataset,
    ref_model: &dyn ReferenceModel,
    reward: &RewardContext,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate(&ref_model.vocab())?;
    let agent = SacAgent::new(
        cfg,
        ref_model.feature_dim(),
        &mut stream(cfg.seed, Stream::PolicyInit),
        &mut stream(cfg.seed, Stream::CriticInit),
    );
    if cfg.episodes > 0 && dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match cfg.train_mode {
        TrainMode::Sync => train_sync(cfg, dataset, ref_model, reward, agent, opts),
        TrainMode::Concurrent => train_concurrent(cfg, dataset, ref_model, reward, agent, opts),
    }
}

fn budget_spent(cfg: &RunConfig, micro_steps: u64) -> bool {
    cfg.max_micro_steps > 0 && micro_steps >= cfg.max_micro_steps
}

fn schedule(cfg: &RunConfig, dataset: &PromptDataset) -> PromptSchedule {
    PromptSchedule::new(dataset.len(), cfg.prompt_order == PromptOrder::Shuffled)
}

fn train_sync(
    cfg: &RunConfig,
    dataset: &PromptDataset,
    ref_model: &dyn ReferenceModel,
    reward: &RewardContext,
    agent: SacAgent,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let params = DecodeParams::from(cfg);
    let mut learner = Learner::new(cfg, agent, opts.out_dir.as_deref(), false)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut env_rng = stream(cfg.seed, Stream::Env);
    let mut data_rng = stream(cfg.seed, Stream::Data);
    let mut sched = schedule(cfg, dataset);
    let mut version = 0;

    for _ in 0..cfg.episodes {
        if budget_spent(cfg, buffer.total_pushed()) {
            break;
        }
        let prompt = &dataset.prompts[sched.next_index(&mut data_rng)];
        let ep = rollout(
            prompt,
            ref_model,
            &learner.agent.policy,
            &params,
            Some(reward),
            &mut env_rng,
            DecodeMode::Sample,
        )?;
        buffer.extend(episode_transitions(&ep));
        while learner.updates < learner.due(buffer.total_pushed()) {
            let batch = buffer.sample(cfg.batch_size, &mut learner.sample_rng)?;
            learner.apply(&batch)?;
            version += 1;
        }
        learner.finish_episode(EpisodeSummary::of(&ep), buffer.len())?;
    }
    let pushed = buffer.total_pushed();
    learner.finish(buffer.len(), pushed, version, pushed)
}

fn train_concurrent(
    cfg: &RunConfig,
    dataset: &PromptDataset,
    ref_model: &dyn ReferenceModel,
    reward: &RewardContext,
    agent: SacAgent,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let params = DecodeParams::from(cfg);
    let mut learner = Learner::new(cfg, agent, opts.out_dir.as_deref(), true)?;
    let buffer = Mutex::new(ReplayBuffer::new(cfg.buffer_capacity));
    let snapshot = RwLock::new(Arc::new(ParamSnapshot {
        version: 0,
        net: Arc::new(learner.agent.policy.net.clone()),
    }));
    let claimed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let collector_pushes = AtomicU64::new(0);
    let (tx, rx) = mpsc::channel::<EpisodeSummary>();
    let forks = (0..cfg.n_collectors)
        .map(|_| ref_model.fork())
        .collect::<Result<Vec<_>>>()?;

    let mut learner_error = None;
    let mut collector_errors = Vec::new();
    let mut version = 0u64;

    std::thread::scope(|scope| {
        let handles: Vec<_> = forks
            .into_iter()
            .enumerate()
            .map(|(i, model)| {
                let tx = tx.clone();
                let (buffer, snapshot, claimed, abort, pushes) =
                    (&buffer, &snapshot, &claimed, &abort, &collector_pushes);
                scope.spawn(move || -> Result<()> {
                    let result = (|| {
                        let mut rng = stream(cfg.seed, Stream::Collector(i as u32));
                        let mut sched = schedule(cfg, dataset);
                        let mut seen = 0u64;
                        while !abort.load(Ordering::Relaxed) {
                            if budget_spent(cfg, pushes.load(Ordering::SeqCst))
                                || claimed.fetch_add(1, Ordering::SeqCst) >= cfg.episodes
                            {
                                break;
                            }
                            let snap = Arc::clone(&snapshot.read());
                            if snap.version < seen {
                                return Err(Error::TrainAborted("parameter snapshot went backwards".into()));
                            }
                            seen = snap.version;
                            let prompt = &dataset.prompts[sched.next_index(&mut rng)];
                            let ep = rollout(
                                prompt,
                                &model,
                                &*snap.net,
                                &params,
                                Some(reward),
                                &mut rng,
                                DecodeMode::Sample,
                            )?;
                            let ts = episode_transitions(&ep);
                            let n = ts.len() as u64;
                            buffer.lock().extend(ts);
                            pushes.fetch_add(n, Ordering::SeqCst);
                            if tx.send(EpisodeSummary::of(&ep)).is_err() {
                                break;
                            }
                        }
                        Ok(())
                    })();
                    if result.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    result
                })
            })
            .collect();
        drop(tx);

        loop {
            let mut progressed = false;
            let mut drained = false;
            loop {
                match rx.try_recv() {
                    Ok(s) => {
                        let size = buffer.lock().len();
                        if let Err(e) = learner.finish_episode(s, size) {
                            learner_error = Some(e);
                        }
                        progressed = true;
                    }
                    Err(mpsc::TryRecvError::Empty) => break,
                    Err(mpsc::TryRecvError::Disconnected) => {
                        drained = true;
                        break;
                    }
                }
            }
            if learner_error.is_some() || abort.load(Ordering::SeqCst) {
                abort.store(true, Ordering::SeqCst);
                break;
            }
            let pushed = buffer.lock().total_pushed();
            if learner.updates < learner.due(pushed) {
                let batch = buffer.lock().sample(cfg.batch_size, &mut learner.sample_rng);
                match batch.and_then(|b| learner.apply(&b)) {
                    Ok(_) => {
                        version += 1;
                        *snapshot.write() = Arc::new(ParamSnapshot {
                            version,
                            net: Arc::new(learner.agent.policy.net.clone()),
                        });
                    }
                    Err(e) => {
                        learner_error = Some(e);
                        abort.store(true, Ordering::SeqCst);
                        break;
                    }
                }
                continue;
            }
            if drained {
                break;
            }
            if !progressed {
                std::thread::sleep(Duration::from_micros(200));
            }
        }

        for (i, h) in handles.into_iter().enumerate() {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => collector_errors.push(format!("collector {i}: {e}")),
                Err(_) => collector_errors.push(format!("collector {i} panicked")),
            }
        }
    });

    if let Some(e) = learner_error {
        return Err(e);
    }
    if !collector_errors.is_empty() {
        return Err(Error::TrainAborted(collector_errors.join("; ")));
    }
    let buffer = buffer.into_inner();
    let pushes = collector_pushes.load(Ordering::SeqCst);
    learner.finish(buffer.len(), buffer.total_pushed(), version, pushes)
}
