use serde::{Deserialize, Serialize};

use super::errors::{mean, median, std_dev};
use super::eval::{eval_suite, EvalSettings};
use super::method::{train_method, MethodSpec, MethodVariant};
use super::parallel_map;
use super::report::EvalReport;
use super::scenario::{Scenario, ScenarioKind};
use crate::env::{ConfigSampler, EnvDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub k: usize,
    pub m: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub median_return: f64,
    pub env_steps: usize,
}

/// Trains and evaluates `variant` for every `K = M` in `values`.
pub fn sensitivity_sweep(
    values: &[usize],
    variant: MethodVariant,
    dist: &EnvDistribution,
    scenario: ScenarioKind,
    spec: &MethodSpec,
    settings: &EvalSettings,
) -> Result<Vec<SensitivityRow>> {
    let scenario = Scenario::new(scenario, dist.clone())?;
    let inner = EvalSettings {
        workers: 1,
        ..settings.clone()
    };
    let cells = parallel_map(settings.workers, values, |&v| -> Result<SensitivityRow> {
        if spec.outer.controller.horizon > v || settings.controller.horizon > v {
            return Err(Error::config("controller.h", format!("planning horizon exceeds K = {v}")));
        }
        let mut s = spec.clone();
        s.outer.train.k = v;
        s.outer.train.m = v;
        let method = train_method(variant, dist, &s, settings.master)?;
        let report = eval_suite(&method, &scenario, &EvalSettings { k: v, ..inner.clone() })?;
        let r = report.returns();
        Ok(SensitivityRow {
            k: v,
            m: v,
            mean_return: mean(&r),
            std_return: std_dev(&r),
            median_return: median(&r),
            env_steps: method.env_steps,
        })
    });
    cells.into_iter().collect()
}

/// Largest over smallest mean return; NaN unless every mean is positive.
pub fn robustness_ratio(rows: &[SensitivityRow]) -> f64 {
    let v: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
    if v.is_empty() || v.iter().any(|x| !(*x > 0.0)) {
        return f64::NAN;
    }
    v.iter().copied().fold(f64::MIN, f64::max) / v.iter().copied().fold(f64::MAX, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub range_low: f64,
    pub range_high: f64,
    pub median_pre_error: f64,
    pub median_post_error: f64,
    pub mean_return: f64,
    pub median_return: f64,
    pub std_return: f64,
    pub env_steps: usize,
}

/// Trains `variant` once per force-magnitude range and evaluates each on
/// a held-out constant force of magnitude `test_force`.
pub fn distribution_sweep(
    ranges: &[[f64; 2]],
    test_force: f64,
    variant: MethodVariant,
    base: &EnvDistribution,
    spec: &MethodSpec,
    settings: &EvalSettings,
) -> Result<(Vec<DistributionRow>, Vec<EvalReport>)> {
    let inner = EvalSettings {
        workers: 1,
        ..settings.clone()
    };
    let cells = parallel_map(settings.workers, ranges, |&range| -> Result<(DistributionRow, EvalReport)> {
        let mut dist = base.clone();
        dist.train = ConfigSampler::Polar { magnitude: range };
        dist.test = ConfigSampler::Polar {
            magnitude: [test_force, test_force],
        };
        dist.extrapolation = true;
        dist.switch_every = None;
        let method = train_method(variant, &dist, spec, settings.master)?;
        let scenario = Scenario::new(ScenarioKind::Generalization, dist)?;
        let mut report = eval_suite(&method, &scenario, &inner)?;
        report.meta.scenario = format!("force_{}_{}", range[0], range[1]);
        let s = report.summary();
        Ok((
            DistributionRow {
                range_low: range[0],
                range_high: range[1],
                median_pre_error: s.median_pre_error,
                median_post_error: s.median_post_error,
                mean_return: s.mean_return,
                median_return: s.median_return,
                std_return: s.std_return,
                env_steps: method.env_steps,
            },
            report,
        ))
    });
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for c in cells {
        let (r, rep) = c?;
        rows.push(r);
        reports.push(rep);
    }
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.env_steps != first.env_steps) {
            return Err(Error::Argument("distribution sweep rows used different budgets".into()));
        }
    }
    Ok((rows, reports))
}
