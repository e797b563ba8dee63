//! Named experiments driven from a [`RunConfig`]; each writes a CSV bundle
//! plus a summary JSON into one directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::Family;
use crate::error::{Error, Result};
use crate::harness::{
    compare, distribution_sweep, error_histogram, heldout_episodes, parallel_map, robustness_ratio, sensitivity_sweep,
    train_method, tune_de_lr, write_csv, write_json, BudgetParity, ErrorHistogram, EvalReport, MethodVariant,
    Scenario, SensitivityRow, TrainedMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Fig4,
    Sensitivity,
    Distribution,
    Compare,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 4] = [Self::Fig4, Self::Sensitivity, Self::Distribution, Self::Compare];

    pub fn key(self) -> &'static str {
        match self {
            Self::Fig4 => "fig4",
            Self::Sensitivity => "sensitivity",
            Self::Distribution => "distribution",
            Self::Compare => "compare",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.key() == s)
    }
}

/// Trains `variant` as configured. The oracle trains on the evaluation
/// scenario; the dynamic-evaluation variant trains an MB prior and picks
/// its rate on validation episodes.
pub fn train_variant(cfg: &RunConfig, variant: MethodVariant) -> Result<TrainedMethod> {
    let spec = cfg.method_spec()?;
    match variant {
        MethodVariant::MbOracle => {
            let sc = Scenario::new(cfg.eval.scenario, cfg.env.clone())?;
            train_method(variant, &sc, &spec, cfg.seed)
        }
        MethodVariant::MbDe => {
            let mb = train_method(MethodVariant::Mb, &cfg.env, &spec, cfg.seed)?;
            with_tuned_rate(cfg, &mb)
        }
        v => train_method(v, &cfg.env, &spec, cfg.seed),
    }
}

/// The dynamic-evaluation variant of a trained MB prior.
pub fn with_tuned_rate(cfg: &RunConfig, mb: &TrainedMethod) -> Result<TrainedMethod> {
    let (lr, steps) = tune_de_lr(mb, &cfg.env, &cfg.method_spec()?, cfg.seed)?;
    log::info!("dynamic evaluation rate {lr:e} chosen on {steps} validation steps");
    Ok(mb.with_dynamic_evaluation(lr))
}

/// Trains every variant in `variants`, sharing one MB prior between MB and
/// MB+DE.
pub fn train_variants(cfg: &RunConfig, variants: &[MethodVariant], workers: usize) -> Result<Vec<TrainedMethod>> {
    let prior = |v: MethodVariant| if v == MethodVariant::MbDe { MethodVariant::Mb } else { v };
    let mut uniq: Vec<MethodVariant> = Vec::new();
    for &v in variants {
        if !uniq.contains(&prior(v)) {
            uniq.push(prior(v));
        }
    }
    let trained = parallel_map(workers, &uniq, |&v| train_variant(cfg, v)).into_iter().collect::<Result<Vec<_>>>()?;
    variants
        .iter()
        .map(|&v| {
            let m = &trained[uniq.iter().position(|&u| u == prior(v)).expect("trained above")];
            if v == MethodVariant::MbDe {
                with_tuned_rate(cfg, m)
            } else {
                Ok(m.clone())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub method: String,
    pub segments: usize,
    pub median_pre_error: f64,
    pub median_post_error: f64,
    pub fraction_improved: f64,
    pub env_steps: usize,
}

impl HistogramSummary {
    pub fn new(method: &TrainedMethod, h: &ErrorHistogram) -> Self {
        Self {
            method: method.variant.label().to_string(),
            segments: h.len(),
            median_pre_error: crate::harness::median(&h.pre()),
            median_post_error: crate::harness::median(&h.post()),
            fraction_improved: h.fraction_improved(),
            env_steps: method.env_steps,
        }
    }
}

/// Error histogram of a trained method on held-out episodes collected by
/// its own controller on fresh training-distribution environments. For
/// ReBAL the unadapted column is the zero-context ablation.
pub fn heldout_histogram(cfg: &RunConfig, method: &TrainedMethod) -> Result<ErrorHistogram> {
    let spec = cfg.method_spec()?;
    let episodes = heldout_episodes(method, &cfg.env, &spec.outer.controller, cfg.eval.heldout_episodes, cfg.seed)?;
    error_histogram(&method.meta, &method.model, &episodes, method.m, cfg.meta.k)
}

/// Pre/post error histograms of GrBAL and ReBAL.
pub fn fig4(cfg: &RunConfig, out: &Path, workers: usize) -> Result<Vec<HistogramSummary>> {
    let methods = train_variants(cfg, &[MethodVariant::Grbal, MethodVariant::Rebal], workers)?;
    std::fs::create_dir_all(out)?;
    let mut summaries = Vec::new();
    for m in &methods {
        let h = heldout_histogram(cfg, m)?;
        let stem = m.variant.key();
        write_csv(&out.join(format!("fig4_{stem}_segments.csv")), &h.samples)?;
        summaries.push(HistogramSummary::new(m, &h));
    }
    write_json(&out.join("fig4_summary.json"), &summaries)?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub method: String,
    pub horizon: usize,
    pub rows: Vec<SensitivityRow>,
    /// Largest over smallest mean return.
    pub ratio: f64,
}

/// `K = M` sweep of the configured method.
pub fn sensitivity(cfg: &RunConfig, out: &Path, workers: usize) -> Result<SensitivitySummary> {
    let mut c = cfg.clone();
    let h = c.experiment.sensitivity_horizon;
    c.controller.h_train = h;
    c.controller.h_test = h;
    let spec = c.method_spec()?;
    let settings = c.eval_settings(workers)?;
    let rows = sensitivity_sweep(&c.experiment.sensitivity_values, c.method, &c.env, c.eval.scenario, &spec, &settings)?;
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("sensitivity.csv"), &rows)?;
    let summary = SensitivitySummary {
        method: c.method.label().to_string(),
        horizon: h,
        ratio: robustness_ratio(&rows),
        rows,
    };
    write_json(&out.join("sensitivity_summary.json"), &summary)?;
    Ok(summary)
}

/// Training-range sweep on Reacher2Link force distributions.
pub fn distribution(cfg: &RunConfig, out: &Path, workers: usize) -> Result<(Vec<crate::harness::DistributionRow>, Vec<EvalReport>)> {
    if !matches!(cfg.env.family, Family::Reacher2Link(_)) {
        return Err(Error::config("env.family", "the distribution experiment needs reacher2link"));
    }
    let spec = cfg.method_spec()?;
    let settings = cfg.eval_settings(workers)?;
    let (rows, reports) = distribution_sweep(
        &cfg.experiment.distribution_ranges,
        cfg.experiment.distribution_test_force,
        cfg.method,
        &cfg.env,
        &spec,
        &settings,
    )?;
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("distribution.csv"), &rows)?;
    for r in &reports {
        r.write(out)?;
    }
    write_json(&out.join("distribution_summary.json"), &rows)?;
    Ok((rows, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub scenario: String,
    pub parity: BudgetParity,
    pub summaries: Vec<crate::harness::Summary>,
}

/// All configured methods on the evaluation scenario, with budget parity
/// checked before any evaluation.
pub fn compare_methods(cfg: &RunConfig, out: &Path, workers: usize) -> Result<CompareSummary> {
    let methods = train_variants(cfg, &cfg.experiment.compare_methods, workers)?;
    let sc = Scenario::new(cfg.eval.scenario, cfg.env.clone())?;
    let c = compare(&methods, &sc, &cfg.eval_settings(workers)?, cfg.eval.oracle_budget_factor)?;
    std::fs::create_dir_all(out)?;
    for r in &c.reports {
        r.write(out)?;
    }
    let summary = CompareSummary {
        scenario: cfg.eval.scenario.key().to_string(),
        parity: c.parity,
        summaries: c.reports.iter().map(|r| r.summary()).collect(),
    };
    write_json(&out.join("compare_summary.json"), &summary)?;
    Ok(summary)
}

/// Runs `name` into `out` and returns the files' directory.
pub fn run_experiment(name: ExperimentName, cfg: &RunConfig, out: &Path, workers: usize) -> Result<PathBuf> {
    match name {
        ExperimentName::Fig4 => {
            for s in fig4(cfg, out, workers)? {
                println!(
                    "{}: {} segments, median pre {:.5}, median post {:.5}, improved {:.3}",
                    s.method, s.segments, s.median_pre_error, s.median_post_error, s.fraction_improved
                );
            }
        }
        ExperimentName::Sensitivity => {
            let s = sensitivity(cfg, out, workers)?;
            for r in &s.rows {
                println!("K = M = {}: mean return {:.3} (std {:.3})", r.k, r.mean_return, r.std_return);
            }
            println!("max/min mean return: {:.4}", s.ratio);
        }
        ExperimentName::Distribution => {
            for r in distribution(cfg, out, workers)?.0 {
                println!(
                    "force range [{}, {}]: median return {:.3}, mean {:.3}",
                    r.range_low, r.range_high, r.median_return, r.mean_return
                );
            }
        }
        ExperimentName::Compare => {
            let s = compare_methods(cfg, out, workers)?;
            println!(
                "budget parity: {} env steps per method{}",
                s.parity.budget,
                s.parity.oracle_budget.map(|o| format!(", oracle {o}")).unwrap_or_default()
            );
            for m in &s.summaries {
                println!(
                    "{}: mean return {:.3} (std {:.3}), normalized {:?}",
                    m.meta.method, m.mean_return, m.std_return, m.mean_normalized_return
                );
            }
        }
    }
    Ok(out.to_path_buf())
}
