use serde::{Deserialize, Serialize};

use super::errors::error_histogram;
use crate::control::{run_adaptive_episode, ControllerConfig, Controller, EpisodeResult, Task};
use crate::env::{EnvInstance, EnvSource, Family};
use crate::error::{Error, Result};
use crate::meta::{meta_train, AdaptRule, MetaParams, OuterConfig, TrainState};
use crate::model::{DynamicsModel, Transition};
use crate::seed;
use crate::tensor::{GruArch, InnerRate, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodVariant {
    Grbal,
    Rebal,
    Mb,
    MbDe,
    MbOracle,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 5] = [Self::Grbal, Self::Rebal, Self::Mb, Self::MbDe, Self::MbOracle];

    pub fn label(self) -> &'static str {
        match self {
            Self::Grbal => "GrBAL",
            Self::Rebal => "ReBAL",
            Self::Mb => "MB",
            Self::MbDe => "MB+DE",
            Self::MbOracle => "MB-oracle",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::Grbal => "grbal",
            Self::Rebal => "rebal",
            Self::Mb => "mb",
            Self::MbDe => "mb_de",
            Self::MbOracle => "mb_oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == s)
    }
}

/// Shape of the learned inner step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    #[default]
    PerParam,
    Scalar,
}

/// Everything needed to build and train one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub outer: OuterConfig,
    pub hidden: Vec<usize>,
    pub rate_mode: RateMode,
    pub inner_lr: f64,
    /// Recurrent context size.
    pub context_dim: usize,
    /// Candidate dynamic-evaluation rates.
    pub de_lr_grid: Vec<f64>,
    /// Episodes collected to choose the dynamic-evaluation rate.
    pub validation_episodes: usize,
    /// Oracle budget relative to the other methods.
    pub oracle_budget_factor: usize,
}

impl MethodSpec {
    /// Environment steps one training run consumes for episodes of length
    /// `horizon`.
    pub fn budget(&self, horizon: usize) -> usize {
        let o = &self.outer;
        let rounds = o.iterations.div_ceil(o.sample_every);
        rounds * o.tasks_per_itr * o.episodes_per_task * horizon
    }
}

/// Untrained prior and adaptation rule for `variant`. Methods sharing an
/// architecture start from the same draw of `theta`.
pub fn build_method(variant: MethodVariant, family: &Family, spec: &MethodSpec, master: u64) -> Result<(MetaParams, DynamicsModel)> {
    let ph = family.physics();
    let mut model =
        DynamicsModel::new(ph.state_dim(), ph.action_dim(), &spec.hidden).with_masked_state(&ph.translation_dims())?;
    if variant == MethodVariant::Rebal {
        if spec.context_dim == 0 {
            return Err(Error::config("rebal.context_dim", "must be at least 1"));
        }
        model = model.with_context(spec.context_dim);
    }
    let theta = model.init_params(&mut seed::rng(master, "init", 0));
    let rule = match variant {
        MethodVariant::Grbal => {
            if !(spec.inner_lr >= 0.0) {
                return Err(Error::config("meta.inner_lr", "must be non-negative"));
            }
            let rate = match spec.rate_mode {
                RateMode::PerParam => InnerRate::PerParam(ParamVector::filled(theta.len(), spec.inner_lr)),
                RateMode::Scalar => InnerRate::Scalar(spec.inner_lr),
            };
            AdaptRule::Gradient { rate }
        }
        MethodVariant::Rebal => {
            let arch = GruArch::new(model.feature_dim(), spec.context_dim, 1);
            let params = arch.init(&mut seed::rng(master, "init", 1));
            AdaptRule::Recurrent { arch, params }
        }
        _ => AdaptRule::None,
    };
    Ok((MetaParams { theta, rule }, model))
}

/// A trained method ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMethod {
    pub variant: MethodVariant,
    pub meta: MetaParams,
    pub model: DynamicsModel,
    /// Adaptation history length used at test time.
    pub m: usize,
    /// Environment steps consumed by training.
    pub env_steps: usize,
    pub de_lr: Option<f64>,
}

impl TrainedMethod {
    pub fn from_state(variant: MethodVariant, state: &TrainState, m: usize) -> Self {
        Self {
            variant,
            meta: state.meta.clone(),
            model: state.model.clone(),
            m,
            env_steps: state.env_steps,
            de_lr: None,
        }
    }

    /// The same prior adapted by plain SGD at rate `de_lr` (dynamic
    /// evaluation).
    pub fn with_dynamic_evaluation(&self, de_lr: f64) -> Self {
        Self {
            variant: MethodVariant::MbDe,
            meta: MetaParams {
                theta: self.meta.theta.clone(),
                rule: AdaptRule::Gradient {
                    rate: InnerRate::Scalar(de_lr),
                },
            },
            de_lr: Some(de_lr),
            ..self.clone()
        }
    }
}

/// Runs the aggregation loop for any variant except the dynamic-evaluation
/// one (which reuses a trained MB prior).
pub fn train_method(
    variant: MethodVariant,
    source: &dyn EnvSource,
    spec: &MethodSpec,
    master: u64,
) -> Result<TrainedMethod> {
    let mut outer = spec.outer.clone();
    if variant == MethodVariant::MbOracle {
        outer.episodes_per_task *= spec.oracle_budget_factor.max(1);
    }
    let (meta, model) = build_method(variant, source.family(), spec, master)?;
    let state = TrainState::new(meta, model, outer.train.clone())?;
    let state = meta_train(state, source, &outer, master, |_| Ok(true))?;
    Ok(TrainedMethod::from_state(variant, &state, outer.train.m))
}

/// Plain model-based training: the same aggregation schedule with no inner
/// adaptation.
pub fn train_mb(source: &dyn EnvSource, spec: &MethodSpec, master: u64) -> Result<TrainedMethod> {
    train_method(MethodVariant::Mb, source, spec, master)
}

/// Adaptive episode with a trained MB prior adapted each step by one SGD
/// step of rate `de_lr` on the last `m` transitions.
#[allow(clippy::too_many_arguments)]
pub fn run_mb_de<T: Task + ?Sized>(
    theta: &ParamVector,
    model: &DynamicsModel,
    env: &mut EnvInstance,
    task: &T,
    ctrl: &ControllerConfig,
    m: usize,
    de_lr: f64,
    episode: u64,
    rng: &mut seed::Rng,
) -> Result<EpisodeResult> {
    let meta = MetaParams {
        theta: theta.clone(),
        rule: AdaptRule::Gradient {
            rate: InnerRate::Scalar(de_lr),
        },
    };
    let mut controller = Controller::new(ctrl.clone())?;
    run_adaptive_episode(&meta, model, env, task, &mut controller, m, episode, rng, None)
}

/// Picks the rate from `spec.de_lr_grid` whose post-update K-step error is
/// lowest on validation episodes collected by the MB controller. Returns
/// the rate and the number of validation environment steps.
pub fn tune_de_lr(
    mb: &TrainedMethod,
    source: &dyn EnvSource,
    spec: &MethodSpec,
    master: u64,
) -> Result<(f64, usize)> {
    if spec.de_lr_grid.is_empty() {
        return Err(Error::config("eval.de_lr_grid", "must list at least one rate"));
    }
    let family = source.family().clone();
    let task = move |s: &[f64], a: &[f64], n: &[f64]| family.reward(s, a, n);
    let mut episodes: Vec<Vec<Transition>> = Vec::new();
    let mut steps = 0;
    let mut controller = Controller::new(spec.outer.controller.clone())?;
    for i in 0..spec.validation_episodes as u64 {
        let mut env = source.sample_instance(&mut seed::rng(master, "validation_env", i))?;
        let mut rng = seed::rng(master, "validation_policy", i);
        let ep = run_adaptive_episode(&mb.meta, &mb.model, &mut env, &task, &mut controller, 0, i, &mut rng, None)?;
        steps += ep.steps();
        episodes.push(ep.transitions);
    }
    let k = spec.outer.train.k;
    let mut best = (f64::INFINITY, spec.de_lr_grid[0]);
    for &lr in &spec.de_lr_grid {
        let de = mb.with_dynamic_evaluation(lr);
        let h = error_histogram(&de.meta, &de.model, &episodes, mb.m, k)?;
        let err = h.mean_post();
        log::info!("dynamic evaluation rate {lr:e}: validation error {err:.5}");
        if err < best.0 {
            best = (err, lr);
        }
    }
    Ok((best.1, steps))
}
