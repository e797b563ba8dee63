//! Run directory layout, checkpointing and resumption.
//!
//! ```text
//! <run>/config.toml              snapshot of the validated RunConfig
//! <run>/checkpoints/iter_NNNN.bin parameters, psi, normalizer, optimizer state
//! <run>/dataset.ndjson            every collected transition, in order
//! <run>/episodes.ndjson           one record per episode: info and length
//! <run>/train_log.csv             one row per iteration
//! <run>/model.bin                 final trained method
//! <run>/eval/<scenario>/          evaluation reports
//! ```
//!
//! A checkpoint records how many episodes and log rows belong to it, so
//! anything written after the last checkpoint is discarded on resume.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::EnvSource;
use crate::error::{Error, Result};
use crate::harness::{
    build_method, eval_suite, read_csv, tune_de_lr, write_csv, EvalReport, MethodVariant, Scenario, ScenarioKind,
    TrainedMethod,
};
use crate::meta::{meta_train, EpisodeInfo, LogRow, MetaParams, ReplayBuffer, TrainState};
use crate::model::{append_ndjson, read_ndjson, write_ndjson, Transition};
use crate::tensor::Checkpoint;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeRecord {
    info: EpisodeInfo,
    len: usize,
}

/// Bookkeeping stored in every checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub method: MethodVariant,
    /// Next iteration to run.
    pub iteration: usize,
    pub env_steps: usize,
    pub next_episode: u64,
    pub episodes: usize,
    pub transitions: usize,
}

/// Header metadata of `model.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_hash: String,
    pub method: MethodVariant,
    pub family: String,
    pub m: usize,
    pub env_steps: usize,
    pub de_lr: Option<f64>,
    /// Validation steps spent choosing `de_lr` (not part of `env_steps`).
    pub validation_steps: usize,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.checkpoints().join(format!("iter_{iteration:04}.bin"))
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.ndjson")
    }
    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes.ndjson")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.bin")
    }
    pub fn eval(&self, scenario: ScenarioKind) -> PathBuf {
        self.root.join("eval").join(scenario.key())
    }

    /// Highest-numbered checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.checkpoints();
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<(usize, PathBuf)> = None;
        for e in fs::read_dir(&dir)? {
            let p = e?.path();
            let n = p
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("iter_"))
                .and_then(|n| n.strip_suffix(".bin"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(n) = n {
                if best.as_ref().is_none_or(|(b, _)| n > *b) {
                    best = Some((n, p));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        if !self.config().is_file() {
            return Err(Error::Artifact(format!("no config snapshot in {}", self.root.display())));
        }
        RunConfig::load(&self.config(), &[])
    }
}

/// Data source the method trains on: the oracle trains directly on the
/// test scenario, everything else on the training distribution.
pub fn training_source(cfg: &RunConfig) -> Result<Box<dyn EnvSource>> {
    Ok(if cfg.method == MethodVariant::MbOracle {
        Box::new(Scenario::new(cfg.eval.scenario, cfg.env.clone())?)
    } else {
        Box::new(cfg.env.clone())
    })
}

/// Outcome of [`train_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub method: TrainedMethod,
    pub log: Vec<LogRow>,
    /// False when training stopped early at the caller's request.
    pub finished: bool,
}

/// Trains the configured method into `dir`. With `resume`, continues from
/// the latest checkpoint of an existing run with the same config hash.
/// `stop_after` ends the run (without writing `model.bin`) once that many
/// iterations are complete, which is how interruption is tested.
pub fn train_run(cfg: &RunConfig, dir: &RunDir, resume: bool, stop_after: Option<usize>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let trained_variant = match cfg.method {
        MethodVariant::MbDe => MethodVariant::Mb,
        v => v,
    };
    let mut spec = cfg.method_spec()?;
    if cfg.method == MethodVariant::MbOracle {
        spec.outer.episodes_per_task *= spec.oracle_budget_factor.max(1);
    }
    let source = training_source(cfg)?;

    let existing = dir.config().exists();
    let mut state = None;
    if existing {
        if !resume {
            return Err(Error::Artifact(format!(
                "{} already holds a run; pass --resume to continue it",
                dir.root.display()
            )));
        }
        let old = dir.load_config()?.hash()?;
        if old != hash {
            return Err(Error::config(
                "resume",
                format!("config hash {hash} differs from the run's {old}"),
            ));
        }
        if let Some(ck) = dir.latest_checkpoint()? {
            state = Some(restore(dir, &ck, &hash, cfg)?);
        }
    }
    fs::create_dir_all(dir.checkpoints())?;
    let mut state = match state {
        Some(s) => s,
        None => {
            fs::write(dir.config(), cfg.to_toml()?)?;
            for p in [dir.dataset(), dir.episodes()] {
                write_ndjson::<Transition>(&p, &[])?;
            }
            write_csv::<LogRow>(&dir.train_log(), &[])?;
            let (meta, model) = build_method(trained_variant, source.family(), &spec, cfg.seed)?;
            TrainState::new(meta, model, spec.outer.train.clone())?
        }
    };

    let mut written = state.buffer.num_episodes();
    let mut stopped = false;
    state = meta_train(state, source.as_ref(), &spec.outer, cfg.seed, |s| {
        let new = &s.buffer.episodes()[written..];
        let records: Vec<EpisodeRecord> = new
            .iter()
            .map(|e| EpisodeRecord {
                info: e.info.clone(),
                len: e.transitions.len(),
            })
            .collect();
        let transitions: Vec<&Transition> = new.iter().flat_map(|e| e.transitions.iter()).collect();
        append_ndjson(&dir.dataset(), &transitions)?;
        append_ndjson(&dir.episodes(), &records)?;
        written = s.buffer.num_episodes();
        write_checkpoint(dir, s, &hash, cfg.method)?;
        write_csv(&dir.train_log(), &s.log)?;
        if stop_after.is_some_and(|n| s.iteration >= n) && s.iteration < spec.outer.iterations {
            stopped = true;
            return Ok(false);
        }
        Ok(true)
    })?;

    let mut method = TrainedMethod::from_state(cfg.method, &state, spec.outer.train.m);
    if stopped {
        return Ok(TrainOutcome {
            method,
            log: state.log,
            finished: false,
        });
    }
    let mut validation_steps = 0;
    if cfg.method == MethodVariant::MbDe {
        let (lr, steps) = tune_de_lr(&method, source.as_ref(), &spec, cfg.seed)?;
        log::info!("dynamic evaluation rate {lr:e} chosen on {steps} validation steps");
        validation_steps = steps;
        method = method.with_dynamic_evaluation(lr);
    }
    let meta = ModelMeta {
        config_hash: hash,
        method: cfg.method,
        family: cfg.env.family.name().to_string(),
        m: method.m,
        env_steps: method.env_steps,
        de_lr: method.de_lr,
        validation_steps,
    };
    method.meta.save(&method.model, serde_json::to_value(&meta)?, &dir.model())?;
    Ok(TrainOutcome {
        method,
        log: state.log,
        finished: true,
    })
}

fn write_checkpoint(dir: &RunDir, s: &TrainState, hash: &str, method: MethodVariant) -> Result<()> {
    let meta = CheckpointMeta {
        config_hash: hash.to_string(),
        method,
        iteration: s.iteration,
        env_steps: s.env_steps,
        next_episode: s.next_episode,
        episodes: s.buffer.num_episodes(),
        transitions: s.buffer.num_transitions(),
    };
    s.meta
        .to_checkpoint(&s.model, serde_json::to_value(&meta)?)?
        .with_block("theta_optimizer", &s.trainer.theta_opt.to_flat())
        .with_block("psi_optimizer", &s.trainer.psi_opt.to_flat())
        .save(&dir.checkpoint(s.iteration))
}

fn restore(dir: &RunDir, path: &Path, hash: &str, cfg: &RunConfig) -> Result<TrainState> {
    let ck = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ck.header.metadata.get("extra").cloned().unwrap_or_default())
        .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    if meta.config_hash != hash {
        return Err(Error::config(
            "resume",
            format!("checkpoint {} was written under config {}", path.display(), meta.config_hash),
        ));
    }
    let (params, model) = MetaParams::from_checkpoint(&ck)?;
    let mut state = TrainState::new(params, model, cfg.method_spec()?.outer.train)?;
    state.trainer.theta_opt.restore(ck.block("theta_optimizer")?)?;
    state.trainer.psi_opt.restore(ck.block("psi_optimizer")?)?;
    state.iteration = meta.iteration;
    state.env_steps = meta.env_steps;
    state.next_episode = meta.next_episode;

    let records: Vec<EpisodeRecord> = read_ndjson(&dir.episodes())?;
    let transitions: Vec<Transition> = read_ndjson(&dir.dataset())?;
    if records.len() < meta.episodes {
        return Err(Error::Artifact(format!(
            "episode index holds {} episodes, checkpoint needs {}",
            records.len(),
            meta.episodes
        )));
    }
    let mut buffer = ReplayBuffer::new();
    let mut rest = transitions.as_slice();
    for r in &records[..meta.episodes] {
        if rest.len() < r.len {
            return Err(Error::Artifact("dataset is shorter than its episode index".into()));
        }
        let (ep, tail) = rest.split_at(r.len);
        buffer.push(r.info.clone(), ep.to_vec())?;
        rest = tail;
    }
    if buffer.num_transitions() != meta.transitions {
        return Err(Error::Artifact("dataset does not match checkpoint transition count".into()));
    }
    state.buffer = buffer;
    let log: Vec<LogRow> = read_csv(&dir.train_log())?;
    state.log = log.into_iter().filter(|r| r.iteration < meta.iteration).collect();

    // Drop anything written after the checkpoint.
    write_ndjson(&dir.episodes(), &records[..meta.episodes])?;
    let kept: Vec<&Transition> = state.buffer.transitions().collect();
    write_ndjson(&dir.dataset(), &kept)?;
    write_csv(&dir.train_log(), &state.log)?;
    log::info!("resumed {} at iteration {}", dir.root.display(), meta.iteration);
    Ok(state)
}

/// Loads the config snapshot and final model of a finished run.
pub fn load_trained(dir: &RunDir) -> Result<(RunConfig, TrainedMethod)> {
    let cfg = dir.load_config()?;
    let path = dir.model();
    if !path.is_file() {
        return Err(Error::Artifact(format!("missing model checkpoint {}", path.display())));
    }
    let (meta, model, extra) = MetaParams::load(&path)?;
    let mm: ModelMeta =
        serde_json::from_value(extra).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    if mm.config_hash != cfg.hash()? {
        return Err(Error::Artifact(format!(
            "{} was written under config {}, snapshot hashes differently",
            path.display(),
            mm.config_hash
        )));
    }
    Ok((
        cfg,
        TrainedMethod {
            variant: mm.method,
            meta,
            model,
            m: mm.m,
            env_steps: mm.env_steps,
            de_lr: mm.de_lr,
        },
    ))
}

/// Evaluates a finished run on `scenario` and writes the report under
/// `<run>/eval/<scenario>/`.
pub fn eval_run(dir: &RunDir, scenario: ScenarioKind, workers: usize) -> Result<(EvalReport, Vec<PathBuf>)> {
    let (cfg, method) = load_trained(dir)?;
    let sc = Scenario::new(scenario, cfg.env.clone())?;
    let report = eval_suite(&method, &sc, &cfg.eval_settings(workers)?)?;
    let files = report.write(&dir.eval(scenario))?;
    Ok((report, files))
}
