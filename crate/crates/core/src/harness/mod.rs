//! Baselines, evaluation protocols and experiment sweeps.

mod errors;
mod eval;
mod method;
mod report;
mod scenario;
mod sweeps;

pub use errors::{error_histogram, k_step_error, mean, median, std_dev, ErrorHistogram, ErrorSample};
pub use eval::{
    check_budget_parity, compare, eval_suite, heldout_episodes, run_eval_episode, BudgetParity, Comparison,
    EvalSettings,
};
pub use method::{
    build_method, run_mb_de, train_mb, train_method, tune_de_lr, MethodSpec, MethodVariant, RateMode, TrainedMethod,
};
pub use report::{read_csv, write_csv, write_json, EpisodeRow, EvalReport, ReportMeta, SegmentRow, Summary};
pub use scenario::{Scenario, ScenarioKind, TestSplit};
pub use sweeps::{distribution_sweep, robustness_ratio, sensitivity_sweep, DistributionRow, SensitivityRow};

/// Maps `f` over `items` on up to `workers` threads; results keep the
/// order of `items` regardless of scheduling.
pub fn parallel_map<T: Sync, U: Send>(workers: usize, items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let f = &f;
    let mut tagged: Vec<(usize, U)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..items.len())
                        .step_by(workers)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    tagged.sort_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, u)| u).collect()
}
