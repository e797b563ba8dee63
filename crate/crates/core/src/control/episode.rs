use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::planner::{Controller, Decision, ModelDynamics, Task};
use crate::env::EnvInstance;
use crate::error::Result;
use crate::meta::{Adapted, MetaParams};
use crate::model::{write_ndjson, DynamicsModel, Transition};

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub adapted_flag: bool,
    pub planner_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub transitions: Vec<Transition>,
    pub log: Vec<StepLog>,
    pub total_return: f64,
    /// The environment faulted before the horizon.
    pub truncated: bool,
}

impl EpisodeResult {
    pub fn steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        write_ndjson(path, &self.log)
    }
}

/// What the policy decided at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepChoice {
    pub action: Vec<f64>,
    pub adapted: bool,
    pub planner_cost: f64,
}

/// Resets `env` and runs it to completion, asking `policy` for an action
/// given the current state and the transitions so far.
pub fn run_episode(
    env: &mut EnvInstance,
    episode: u64,
    mut policy: impl FnMut(&[f64], &[Transition]) -> Result<StepChoice>,
) -> Result<EpisodeResult> {
    let mut s = env.reset();
    let mut out = EpisodeResult {
        transitions: Vec::with_capacity(env.horizon()),
        log: Vec::with_capacity(env.horizon()),
        total_return: 0.0,
        truncated: false,
    };
    loop {
        let t = env.t();
        let choice = policy(&s, &out.transitions)?;
        let step = env.step(&choice.action)?;
        if step.fault {
            log::warn!("episode {episode} faulted at t = {t}; truncating");
            out.truncated = true;
            break;
        }
        let a: Vec<f64> = choice.action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        out.total_return += step.reward;
        out.log.push(StepLog {
            t,
            s: s.clone(),
            a: a.clone(),
            r: step.reward,
            s_next: step.s_next.clone(),
            adapted_flag: choice.adapted,
            planner_cost: choice.planner_cost,
        });
        out.transitions.push(Transition {
            s,
            a,
            s_next: step.s_next.clone(),
            episode,
            t,
        });
        s = step.s_next;
        if step.done {
            break;
        }
    }
    Ok(out)
}

/// Uniformly random actions in `[-1, 1]`.
pub fn run_random_episode<R: Rng + ?Sized>(env: &mut EnvInstance, episode: u64, rng: &mut R) -> Result<EpisodeResult> {
    let ad = env.action_dim();
    run_episode(env, episode, |_, _| {
        Ok(StepChoice {
            action: (0..ad).map(|_| rng.random_range(-1.0..1.0)).collect(),
            adapted: false,
            planner_cost: f64::NAN,
        })
    })
}

/// The most recent `min(m, len)` transitions.
pub fn recent(history: &[Transition], m: usize) -> &[Transition] {
    &history[history.len().saturating_sub(m)..]
}

/// Online adaptation: every step adapts the prior from the most recent
/// `min(M, t)` transitions (always starting again from the prior), plans
/// with the adapted model and executes the first action. `on_step` sees
/// the adapted parameters used at each step.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive_episode<T: Task + ?Sized, R: Rng + ?Sized>(
    meta: &MetaParams,
    model: &DynamicsModel,
    env: &mut EnvInstance,
    task: &T,
    controller: &mut Controller,
    m: usize,
    episode: u64,
    rng: &mut R,
    mut on_step: Option<&mut dyn FnMut(usize, &Adapted)>,
) -> Result<EpisodeResult> {
    meta.check(model)?;
    controller.reset();
    run_episode(env, episode, |s, history| {
        let adapted = if m == 0 {
            meta.unadapted(model)
        } else {
            meta.adapt(model, recent(history, m))?
        };
        if let Some(f) = on_step.as_deref_mut() {
            f(history.len(), &adapted);
        }
        let dynamics = ModelDynamics {
            model,
            theta: &adapted.theta,
            context: &adapted.context,
        };
        let Decision { action, planner_cost } = controller.act(&dynamics, task, s, rng)?;
        Ok(StepChoice {
            action,
            adapted: adapted.adapted,
            planner_cost,
        })
    })
}
