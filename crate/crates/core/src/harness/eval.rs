use serde::{Deserialize, Serialize};

use super::errors::error_histogram;
use super::method::{MethodVariant, TrainedMethod};
use super::parallel_map;
use super::report::{EpisodeRow, EvalReport, ReportMeta, SegmentRow};
use super::scenario::Scenario;
use crate::control::{run_adaptive_episode, Controller, ControllerConfig, EpisodeResult};
use crate::env::EnvSource;
use crate::error::{Error, Result};
use crate::model::Transition;
use crate::seed;

/// Settings shared by every evaluation in one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub controller: ControllerConfig,
    pub seeds: Vec<u64>,
    /// Evaluation-slice length of the error segments.
    pub k: usize,
    pub master: u64,
    pub config_hash: String,
    pub workers: usize,
}

/// One test episode of `method` on the scenario instance for `seed_v`.
pub fn run_eval_episode(method: &TrainedMethod, scenario: &Scenario, ctrl: &ControllerConfig, seed_v: u64, master: u64) -> Result<EpisodeResult> {
    let mut env = scenario.instance(master, seed_v)?;
    let family = scenario.family().clone();
    let task = move |s: &[f64], a: &[f64], n: &[f64]| family.reward(s, a, n);
    let mut controller = Controller::new(ctrl.clone())?;
    let mut rng = seed::rng(master, "eval_policy", seed_v);
    run_adaptive_episode(&method.meta, &method.model, &mut env, &task, &mut controller, method.m, seed_v, &mut rng, None)
}

/// Runs the scenario for every seed and scores returns and segment errors.
pub fn eval_suite(method: &TrainedMethod, scenario: &Scenario, settings: &EvalSettings) -> Result<EvalReport> {
    let cells = parallel_map(settings.workers, &settings.seeds, |&s| -> Result<(EpisodeRow, Vec<SegmentRow>)> {
        let ep = run_eval_episode(method, scenario, &settings.controller, s, settings.master)?;
        let hist = error_histogram(&method.meta, &method.model, std::slice::from_ref(&ep.transitions), method.m, settings.k)?;
        let segs = hist
            .samples
            .iter()
            .map(|x| SegmentRow {
                seed: s,
                t: x.t,
                pre_error: x.pre,
                post_error: x.post,
            })
            .collect();
        Ok((
            EpisodeRow {
                seed: s,
                total_return: ep.total_return,
                normalized_return: None,
                steps: ep.steps(),
                truncated: ep.truncated,
            },
            segs,
        ))
    });
    let mut report = EvalReport {
        meta: ReportMeta {
            method: method.variant.label().to_string(),
            family: scenario.family().name().to_string(),
            scenario: scenario.kind.key().to_string(),
            split: "test".into(),
            config_hash: settings.config_hash.clone(),
            env_steps: method.env_steps,
            m: method.m,
            k: settings.k,
            de_lr: method.de_lr,
        },
        episodes: Vec::new(),
        segments: Vec::new(),
    };
    for c in cells {
        let (row, segs) = c?;
        report.episodes.push(row);
        report.segments.extend(segs);
    }
    Ok(report)
}

/// Environment-step accounting of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetParity {
    pub per_method: Vec<(String, usize)>,
    pub budget: usize,
    pub oracle_budget: Option<usize>,
}

/// Fails unless every non-oracle method used the same number of training
/// steps and the oracle (if any) exactly `oracle_factor` times that.
pub fn check_budget_parity(methods: &[TrainedMethod], oracle_factor: usize) -> Result<BudgetParity> {
    let per_method: Vec<(String, usize)> =
        methods.iter().map(|m| (m.variant.label().to_string(), m.env_steps)).collect();
    let regular: Vec<usize> = methods
        .iter()
        .filter(|m| m.variant != MethodVariant::MbOracle)
        .map(|m| m.env_steps)
        .collect();
    let Some(&budget) = regular.first() else {
        return Err(Error::Argument("comparison needs at least one non-oracle method".into()));
    };
    if regular.iter().any(|&b| b != budget) {
        return Err(Error::Argument(format!("budget parity violated: {per_method:?}")));
    }
    let oracle = methods.iter().find(|m| m.variant == MethodVariant::MbOracle).map(|m| m.env_steps);
    if let Some(o) = oracle {
        if o != budget * oracle_factor {
            return Err(Error::Argument(format!(
                "oracle budget {o} is not {oracle_factor} x {budget}: {per_method:?}"
            )));
        }
    }
    Ok(BudgetParity {
        per_method,
        budget,
        oracle_budget: oracle,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub parity: BudgetParity,
    pub reports: Vec<EvalReport>,
}

/// Evaluates every method on the same scenario instances after checking
/// budget parity. With an oracle present, returns are normalized by its
/// mean return.
pub fn compare(methods: &[TrainedMethod], scenario: &Scenario, settings: &EvalSettings, oracle_factor: usize) -> Result<Comparison> {
    let parity = check_budget_parity(methods, oracle_factor)?;
    log::info!("budget parity holds: {} steps per method, oracle {:?}", parity.budget, parity.oracle_budget);
    let mut reports = methods
        .iter()
        .map(|m| eval_suite(m, scenario, settings))
        .collect::<Result<Vec<_>>>()?;
    let anchor = methods
        .iter()
        .position(|m| m.variant == MethodVariant::MbOracle)
        .map(|i| reports[i].mean_return());
    if let Some(a) = anchor {
        if a > 0.0 && a.is_finite() {
            reports.iter_mut().for_each(|r| r.normalize(a));
        } else {
            log::warn!("oracle mean return {a} is not positive; returns left unnormalized");
        }
    }
    Ok(Comparison { parity, reports })
}

/// Episodes collected by the method's own adaptive controller on fresh
/// instances of `source` (never part of any training buffer).
pub fn heldout_episodes(
    method: &TrainedMethod,
    source: &dyn EnvSource,
    ctrl: &ControllerConfig,
    n: usize,
    master: u64,
) -> Result<Vec<Vec<Transition>>> {
    let family = source.family().clone();
    let task = move |s: &[f64], a: &[f64], x: &[f64]| family.reward(s, a, x);
    let mut controller = Controller::new(ctrl.clone())?;
    (0..n as u64)
        .map(|i| {
            let mut env = source.sample_instance(&mut seed::rng(master, "heldout_env", i))?;
            let mut rng = seed::rng(master, "heldout_policy", i);
            let ep =
                run_adaptive_episode(&method.meta, &method.model, &mut env, &task, &mut controller, method.m, i, &mut rng, None)?;
            Ok(ep.transitions)
        })
        .collect()
}
