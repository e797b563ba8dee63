use serde::{Deserialize, Serialize};

use super::buffer::{EpisodeInfo, ReplayBuffer};
use super::loss::segment_loss;
use super::params::MetaParams;
use super::train::{MetaTrainer, TrainConfig};
use crate::control::{run_adaptive_episode, run_random_episode, Controller, ControllerConfig};
use crate::env::EnvSource;
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, Normalizer};
use crate::seed;

/// Schedule of data aggregation and gradient epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    pub train: TrainConfig,
    /// Aggregation iterations.
    pub iterations: usize,
    /// Collect new data every this many iterations.
    pub sample_every: usize,
    pub tasks_per_itr: usize,
    pub episodes_per_task: usize,
    pub epochs: usize,
    /// Upper bound on gradient steps per epoch.
    pub max_steps_per_epoch: Option<usize>,
    pub controller: ControllerConfig,
    /// Segments scored for the pre/post columns of the training log.
    pub eval_segments: usize,
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        let c = |p: &str, m: &str| Err(Error::config(p, m));
        if self.train.k == 0 {
            return c("meta.K", "must be at least 1");
        }
        if self.train.batch_size == 0 {
            return c("meta.batch_size", "must be at least 1");
        }
        if self.sample_every == 0 {
            return c("meta.n_s", "must be at least 1");
        }
        if self.tasks_per_itr == 0 || self.episodes_per_task == 0 {
            return c("meta.tasks_per_itr", "must collect at least one episode");
        }
        self.controller.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub meta_loss: f64,
    pub pre_update_eval_error: f64,
    pub post_update_eval_error: f64,
    pub env_steps_collected: usize,
}

/// Everything needed to continue training from an iteration boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Next iteration to run.
    pub iteration: usize,
    pub meta: MetaParams,
    pub model: DynamicsModel,
    pub trainer: MetaTrainer,
    pub buffer: ReplayBuffer,
    pub env_steps: usize,
    pub next_episode: u64,
    pub log: Vec<LogRow>,
}

impl TrainState {
    pub fn new(meta: MetaParams, model: DynamicsModel, train: TrainConfig) -> Result<Self> {
        meta.check(&model)?;
        let trainer = MetaTrainer::new(train, &meta);
        Ok(Self {
            iteration: 0,
            meta,
            model,
            trainer,
            buffer: ReplayBuffer::new(),
            env_steps: 0,
            next_episode: 0,
            log: Vec::new(),
        })
    }
}

/// Collects `episodes_per_task x T` steps on each of `tasks_per_itr` sampled
/// environments, with uniform-random actions while no data exist yet and
/// the adaptive controller afterwards.
pub fn collect(state: &mut TrainState, source: &dyn EnvSource, cfg: &OuterConfig, master: u64) -> Result<usize> {
    let it = state.iteration as u64;
    let random = state.buffer.num_transitions() == 0;
    let mut controller = Controller::new(cfg.controller.clone())?;
    let mut steps = 0;
    for task in 0..cfg.tasks_per_itr as u64 {
        let mut task_rng = seed::rng(master, "task", it * 1_000_000 + task);
        let proto = source.sample_instance(&mut task_rng)?;
        // Episodes that end early are followed by new ones until the task's
        // step budget is spent, so every method sees the same budget.
        let budget = cfg.episodes_per_task * proto.horizon();
        let mut used = 0;
        while used < budget {
            let id = state.next_episode;
            state.next_episode += 1;
            let mut env = proto
                .reseeded(seed::derive(master, "episode_env", id))
                .with_horizon(proto.horizon().min(budget - used));
            let mut rng = seed::rng(master, "collect_policy", id);
            let ep = if random {
                run_random_episode(&mut env, id, &mut rng)?
            } else {
                let fam = source.family().clone();
                let task = move |s: &[f64], a: &[f64], n: &[f64]| fam.reward(s, a, n);
                run_adaptive_episode(
                    &state.meta,
                    &state.model,
                    &mut env,
                    &task,
                    &mut controller,
                    cfg.train.m,
                    id,
                    &mut rng,
                    None,
                )?
            };
            if ep.truncated {
                log::warn!("collection episode {id} faulted after {} steps", ep.steps());
            }
            used += ep.steps().max(1);
            if ep.transitions.is_empty() {
                continue;
            }
            let info = EpisodeInfo {
                id,
                family: source.family().name().to_string(),
                config: proto.base_config().to_vec(),
            };
            state.buffer.push(info, ep.transitions)?;
        }
        steps += used;
    }
    state.env_steps += steps;
    Ok(steps)
}

/// Refits the normalizer and runs the gradient epochs of one iteration.
/// Returns the mean pre-step meta-loss.
pub fn fit(state: &mut TrainState, cfg: &OuterConfig, master: u64) -> Result<f64> {
    let data = state.buffer.all_transitions();
    state.model.normalizer = Normalizer::fit(&data)?;
    let mut per_epoch = state.trainer.steps_per_epoch(&state.buffer);
    if let Some(cap) = cfg.max_steps_per_epoch {
        per_epoch = per_epoch.min(cap.max(1));
    }
    let mut rng = seed::rng(master, "segment_sampler", state.iteration as u64);
    let mut total = 0.0;
    let mut n = 0usize;
    for _ in 0..cfg.epochs {
        for _ in 0..per_epoch {
            let r = state.trainer.step(&mut state.meta, &state.model, &state.buffer, &mut rng)?;
            total += r.loss;
            n += 1;
        }
    }
    Ok(if n == 0 { f64::NAN } else { total / n as f64 })
}

/// Mean evaluation-slice loss without and with adaptation on sampled
/// segments.
pub fn pre_post_error(state: &TrainState, cfg: &OuterConfig, master: u64) -> Result<(f64, f64)> {
    let mut rng = seed::rng(master, "log_segments", state.iteration as u64);
    let n = cfg.eval_segments.max(1);
    let segs = match state.buffer.sample(n, cfg.train.m, cfg.train.k, &mut rng) {
        Ok(s) => s,
        Err(Error::Data { .. }) => return Ok((f64::NAN, f64::NAN)),
        Err(e) => return Err(e),
    };
    let mut pre = 0.0;
    let mut post = 0.0;
    for s in &segs {
        pre += segment_loss(&state.meta, &state.model, s, false)?;
        post += segment_loss(&state.meta, &state.model, s, true)?;
    }
    Ok((pre / segs.len() as f64, post / segs.len() as f64))
}

/// Runs iteration `state.iteration` and advances it.
pub fn meta_train_iteration(state: &mut TrainState, source: &dyn EnvSource, cfg: &OuterConfig, master: u64) -> Result<LogRow> {
    let mut collected = 0;
    if state.iteration % cfg.sample_every == 0 {
        collected = collect(state, source, cfg, master)?;
    }
    let meta_loss = fit(state, cfg, master)?;
    let (pre, post) = pre_post_error(state, cfg, master)?;
    let row = LogRow {
        iteration: state.iteration,
        meta_loss,
        pre_update_eval_error: pre,
        post_update_eval_error: post,
        env_steps_collected: collected,
    };
    log::info!(
        "iteration {}: meta loss {:.5}, pre {:.5}, post {:.5}, {} new steps",
        row.iteration,
        row.meta_loss,
        row.pre_update_eval_error,
        row.post_update_eval_error,
        collected
    );
    state.log.push(row.clone());
    state.iteration += 1;
    Ok(row)
}

/// Full meta-training: iterates until `cfg.iterations` are done, calling
/// `after` at every iteration boundary (for checkpoints).
pub fn meta_train(
    mut state: TrainState,
    source: &dyn EnvSource,
    cfg: &OuterConfig,
    master: u64,
    mut after: impl FnMut(&TrainState) -> Result<bool>,
) -> Result<TrainState> {
    cfg.validate()?;
    while state.iteration < cfg.iterations {
        meta_train_iteration(&mut state, source, cfg, master)?;
        if !after(&state)? {
            break;
        }
    }
    Ok(state)
}
