use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::MetaParams;
use crate::model::{DynamicsModel, Transition};

/// Open-loop K-step errors at one position of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub episode: u64,
    pub t: usize,
    pub pre: f64,
    pub post: f64,
}

/// Paired pre/post-update errors, one per legal position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub samples: Vec<ErrorSample>,
}

impl ErrorHistogram {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pre(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.pre).collect()
    }

    pub fn post(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.post).collect()
    }

    pub fn mean_post(&self) -> f64 {
        mean(&self.post())
    }

    /// Fraction of positions where adaptation lowered the error.
    pub fn fraction_improved(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.samples.iter().filter(|s| s.post < s.pre).count() as f64 / self.samples.len() as f64
    }

    pub fn extend(&mut self, other: ErrorHistogram) {
        self.samples.extend(other.samples);
    }

    /// Counts per bin for `bins` equal-width bins over `[0, hi]`; values
    /// above `hi` land in the last bin.
    pub fn bin_counts(values: &[f64], hi: f64, bins: usize) -> Vec<usize> {
        let mut out = vec![0; bins];
        if bins == 0 || !(hi > 0.0) {
            return out;
        }
        for v in values {
            let i = ((v / hi) * bins as f64).floor();
            out[(i.max(0.0) as usize).min(bins - 1)] += 1;
        }
        out
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median by total order; NaN when empty.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean over steps and state dims of `|s_hat - s| / std`.
pub fn k_step_error(
    model: &DynamicsModel,
    theta: &[f64],
    ctx: &[f64],
    window: &[Transition],
) -> Result<f64> {
    let actions: Vec<Vec<f64>> = window.iter().map(|t| t.a.clone()).collect();
    let pred = model.rollout(theta, ctx, &window[0].s, &actions)?;
    let std = &model.normalizer.state.std;
    let mut total = 0.0;
    for (k, tr) in window.iter().enumerate() {
        for ((p, s), sd) in pred[k + 1].iter().zip(&tr.s_next).zip(std) {
            total += (p - s).abs() / sd;
        }
    }
    Ok(total / (window.len() * model.state_dim) as f64)
}

/// For every position `t` with `m` preceding and `k` following transitions
/// in an episode, the K-step open-loop error under the prior and under the
/// parameters adapted from transitions `t-m..t`.
pub fn error_histogram(
    meta: &MetaParams,
    model: &DynamicsModel,
    episodes: &[Vec<Transition>],
    m: usize,
    k: usize,
) -> Result<ErrorHistogram> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    meta.check(model)?;
    let prior = meta.unadapted(model);
    let mut out = ErrorHistogram::default();
    for ep in episodes {
        if ep.len() < m + k {
            continue;
        }
        for t in m..=ep.len() - k {
            let window = &ep[t..t + k];
            let pre = k_step_error(model, &prior.theta, &prior.context, window)?;
            let adapted = meta.adapt(model, &ep[t - m..t])?;
            let post = k_step_error(model, &adapted.theta, &adapted.context, window)?;
            out.samples.push(ErrorSample {
                episode: ep[t].episode,
                t: ep[t].t,
                pre,
                post,
            });
        }
    }
    Ok(out)
}
