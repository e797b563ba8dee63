//! Declarative run configuration: one TOML file plus dotted-path overrides.
//!
//! Defaults are a desk-scale PlanarHopper actuator-failure run. The
//! comment after each default gives the half-cheetah value it scales down
//! from where one exists.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, PlannerKind};
use crate::env::{ConfigSampler, EnvDistribution, Family, PlanarHopper};
use crate::error::{Error, Result};
use crate::harness::{EvalSettings, MethodSpec, MethodVariant, RateMode, ScenarioKind};
use crate::meta::{OptimizerKind, OuterConfig, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: MethodVariant,
    /// Master seed; every subsystem stream is derived from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Run directory, relative to the output root unless absolute. Not part
    /// of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub meta: MetaSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub rebal: RebalSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default = "default_env")]
    pub env: EnvDistribution,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    /// Outer step size for theta (0.001).
    pub lr: f64,
    /// Initial inner step size (0.01).
    pub inner_lr: f64,
    /// Outer step size for the adaptation parameters.
    pub psi_lr: f64,
    /// Gradient epochs per iteration (50).
    pub epochs: usize,
    /// Evaluation slice length (32).
    #[serde(rename = "K")]
    pub k: usize,
    /// Adaptation history length (32).
    #[serde(rename = "M")]
    pub m: usize,
    /// Segments per meta-batch (500).
    pub batch_size: usize,
    /// Environments sampled per collection round (32).
    pub tasks_per_itr: usize,
    /// Environment steps per collection round, over all tasks (64000).
    pub ts_per_itr: usize,
    pub iterations: usize,
    /// Collect new data every `n_s` iterations.
    pub n_s: usize,
    pub max_steps_per_epoch: Option<usize>,
    pub optimizer: OptimizerKind,
    pub rate_mode: RateMode,
    /// Segments scored for the training log.
    pub eval_segments: usize,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            inner_lr: 0.01,
            psi_lr: 1e-3,
            epochs: 5,
            k: 16,
            m: 16,
            batch_size: 32,
            tasks_per_itr: 8,
            ts_per_itr: 1600,
            iterations: 15,
            n_s: 1,
            max_steps_per_epoch: Some(100),
            optimizer: OptimizerKind::Adam,
            rate_mode: RateMode::PerParam,
            eval_segments: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths (512, 512, 512).
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RebalSection {
    pub context_dim: usize,
}

impl Default for RebalSection {
    fn default() -> Self {
        Self { context_dim: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub planner: PlannerKind,
    /// Candidates per step while collecting data (1000).
    #[serde(rename = "n_A_train")]
    pub n_a_train: usize,
    /// Planning horizon while collecting data (10).
    #[serde(rename = "H_train")]
    pub h_train: usize,
    /// Candidates per step at test time (2500).
    #[serde(rename = "n_A_test")]
    pub n_a_test: usize,
    /// Planning horizon at test time (15).
    #[serde(rename = "H_test")]
    pub h_test: usize,
    pub temperature: f64,
    /// Perturbation std as a fraction of the action range.
    pub noise_scale: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            planner: PlannerKind::Mppi,
            n_a_train: 64,
            h_train: 16,
            n_a_test: 128,
            h_test: 16,
            temperature: 0.1,
            noise_scale: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub scenario: ScenarioKind,
    pub seeds: Vec<u64>,
    pub de_lr_grid: Vec<f64>,
    pub validation_episodes: usize,
    pub oracle_budget_factor: usize,
    /// Held-out episodes scored for the error histogram.
    pub heldout_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::FastAdaptation,
            seeds: (0..5).collect(),
            de_lr_grid: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
            validation_episodes: 2,
            oracle_budget_factor: 4,
            heldout_episodes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// `K = M` values of the sensitivity sweep.
    pub sensitivity_values: Vec<usize>,
    /// Planning horizon (train and test) used in every sensitivity cell,
    /// so that it fits the smallest `K`.
    pub sensitivity_horizon: usize,
    /// Training force-magnitude ranges of the distribution sweep.
    pub distribution_ranges: Vec<[f64; 2]>,
    pub distribution_test_force: f64,
    pub compare_methods: Vec<MethodVariant>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            sensitivity_values: vec![8, 16, 32],
            sensitivity_horizon: 8,
            distribution_ranges: vec![[0.0, 0.0], [0.0, 2.0], [0.0, 4.0]],
            distribution_test_force: 4.0,
            compare_methods: vec![MethodVariant::Grbal, MethodVariant::Mb, MethodVariant::MbDe],
        }
    }
}

fn default_method() -> MethodVariant {
    MethodVariant::Grbal
}

fn default_seed() -> u64 {
    1
}

/// PlanarHopper with one of the two actuators crippled, switching every
/// 50 steps during training.
pub fn default_env() -> EnvDistribution {
    let mut d = EnvDistribution::new(
        Family::PlanarHopper(PlanarHopper::default()),
        ConfigSampler::Choice {
            options: vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
        },
        ConfigSampler::Choice {
            options: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        },
    );
    d.switch_every = Some(50);
    d
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            seed: default_seed(),
            output_dir: None,
            meta: MetaSection::default(),
            model: ModelSection::default(),
            rebal: RebalSection::default(),
            controller: ControllerSection::default(),
            env: default_env(),
            eval: EvalSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies `key.path=value` overrides in order and
    /// validates the result. Keys left out keep their defaults; a tagged
    /// table (`env.family`, `env.train`, `env.test`) given in the file is
    /// taken whole.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
        let mut table: toml::Table = toml::from_str(&Self::default().to_toml()?)
            .map_err(|e| Error::Artifact(format!("default config: {e}")))?;
        merge(&mut table, user, "");
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Artifact(format!("config serialization: {e}")))
    }

    /// Content hash of everything that affects results.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        Ok(seed::content_hash(c.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let c = &self.controller;
        let err = |p: &str, msg: String| Err(Error::config(p, msg));
        if !(m.lr > 0.0) {
            return err("meta.lr", "must be positive".into());
        }
        if !(m.psi_lr >= 0.0) {
            return err("meta.psi_lr", "must be non-negative".into());
        }
        if !(m.inner_lr >= 0.0) {
            return err("meta.inner_lr", "must be non-negative".into());
        }
        if m.k == 0 {
            return err("meta.K", "must be at least 1".into());
        }
        if m.m == 0 && self.method != MethodVariant::Mb && self.method != MethodVariant::MbOracle {
            return err("meta.M", format!("must be at least 1 for {}", self.method.label()));
        }
        if c.h_train > m.k {
            return err("controller.H_train", format!("H = {} exceeds K = {}", c.h_train, m.k));
        }
        if c.h_test > m.k {
            return err("controller.H_test", format!("H = {} exceeds K = {}", c.h_test, m.k));
        }
        let per_round = m.tasks_per_itr * self.env.horizon;
        if per_round == 0 || m.ts_per_itr == 0 || m.ts_per_itr % per_round != 0 {
            return err(
                "meta.ts_per_itr",
                format!("must be a positive multiple of tasks_per_itr x T = {per_round}"),
            );
        }
        if m.iterations == 0 {
            return err("meta.iterations", "must be at least 1".into());
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return err("model.hidden", "layer widths must be positive".into());
        }
        if self.method == MethodVariant::Rebal && self.rebal.context_dim == 0 {
            return err("rebal.context_dim", "must be at least 1".into());
        }
        let ex = &self.experiment;
        if ex.sensitivity_horizon == 0 {
            return err("experiment.sensitivity_horizon", "must be at least 1".into());
        }
        if let Some(&v) = ex.sensitivity_values.iter().find(|&&v| v < ex.sensitivity_horizon) {
            return err("experiment.sensitivity_values", format!("K = {v} is below the sweep horizon"));
        }
        if self.eval.de_lr_grid.iter().any(|r| !(*r >= 0.0)) {
            return err("eval.de_lr_grid", "rates must be non-negative".into());
        }
        self.env.validate()?;
        self.method_spec()?.outer.validate()?;
        self.test_controller().validate()
    }

    fn controller(&self, n_a: usize, horizon: usize) -> ControllerConfig {
        let dim = self.env.family.physics().action_dim();
        let mut cfg = ControllerConfig::unit_box(self.controller.planner, dim, n_a, horizon, self.controller.noise_scale);
        cfg.temperature = self.controller.temperature;
        cfg
    }

    pub fn train_controller(&self) -> ControllerConfig {
        self.controller(self.controller.n_a_train, self.controller.h_train)
    }

    pub fn test_controller(&self) -> ControllerConfig {
        self.controller(self.controller.n_a_test, self.controller.h_test)
    }

    pub fn method_spec(&self) -> Result<MethodSpec> {
        let m = &self.meta;
        Ok(MethodSpec {
            outer: OuterConfig {
                train: TrainConfig {
                    m: m.m,
                    k: m.k,
                    outer_lr: m.lr,
                    psi_lr: m.psi_lr,
                    batch_size: m.batch_size,
                    optimizer: m.optimizer,
                },
                iterations: m.iterations,
                sample_every: m.n_s,
                tasks_per_itr: m.tasks_per_itr,
                episodes_per_task: m.ts_per_itr / (m.tasks_per_itr * self.env.horizon).max(1),
                epochs: m.epochs,
                max_steps_per_epoch: m.max_steps_per_epoch,
                controller: self.train_controller(),
                eval_segments: m.eval_segments,
            },
            hidden: self.model.hidden.clone(),
            rate_mode: m.rate_mode,
            inner_lr: m.inner_lr,
            context_dim: self.rebal.context_dim,
            de_lr_grid: self.eval.de_lr_grid.clone(),
            validation_episodes: self.eval.validation_episodes,
            oracle_budget_factor: self.eval.oracle_budget_factor,
        })
    }

    pub fn eval_settings(&self, workers: usize) -> Result<EvalSettings> {
        Ok(EvalSettings {
            controller: self.test_controller(),
            seeds: self.eval.seeds.clone(),
            k: self.meta.k,
            master: self.seed,
            config_hash: self.hash()?,
            workers: workers.max(1),
        })
    }
}

const WHOLE_TABLES: [&str; 3] = ["env.family", "env.train", "env.test"];

fn merge(base: &mut toml::Table, user: toml::Table, prefix: &str) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !WHOLE_TABLES.contains(&path.as_str()) => {
                merge(b, u, &path)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key.path=value"))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(path, "empty key in override path"));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(keys[..=i].join("."), "is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
