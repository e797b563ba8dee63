use serde::{Deserialize, Serialize};

use super::Transition;
use crate::error::{check_dim, Error, Result};

/// Standard deviations below this are clamped.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension affine statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Stats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Empirical mean and (population) standard deviation, floored.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    fn check(&self, what: &str) -> Result<()> {
        check_dim(what, self.mean.len(), self.std.len())?;
        if let Some(i) = self.std.iter().position(|s| !(s.is_finite() && *s >= STD_FLOOR)) {
            return Err(Error::numeric(format!("{what} std"), i));
        }
        Ok(())
    }
}

/// Statistics for states, actions and state deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state: Stats,
    pub action: Stats,
    pub delta: Stats,
}

impl Normalizer {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state: Stats::identity(state_dim),
            action: Stats::identity(action_dim),
            delta: Stats::identity(state_dim),
        }
    }

    /// Fits all three blocks from a dataset of at least two transitions.
    pub fn fit(data: &[Transition]) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Argument(format!(
                "normalizer needs at least 2 transitions, got {}",
                data.len()
            )));
        }
        let sd = data[0].s.len();
        let ad = data[0].a.len();
        for (i, t) in data.iter().enumerate() {
            t.check(sd, ad).map_err(|e| Error::Argument(format!("transition {i}: {e}")))?;
        }
        let deltas: Vec<Vec<f64>> = data.iter().map(Transition::delta).collect();
        Ok(Self {
            state: Stats::fit(sd, data.iter().map(|t| t.s.as_slice())),
            action: Stats::fit(ad, data.iter().map(|t| t.a.as_slice())),
            delta: Stats::fit(sd, deltas.iter().map(Vec::as_slice)),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.state.check("state normalizer")?;
        self.action.check("action normalizer")?;
        self.delta.check("delta normalizer")?;
        check_dim("delta normalizer", self.state.dim(), self.delta.dim())
    }

    /// Flat layout used in checkpoints: state mean/std, action mean/std,
    /// delta mean/std.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.state, &self.action, &self.delta]
            .iter()
            .flat_map(|s| s.mean.iter().chain(&s.std).copied())
            .collect()
    }

    pub fn from_flat(state_dim: usize, action_dim: usize, v: &[f64]) -> Result<Self> {
        check_dim("normalizer block", 4 * state_dim + 2 * action_dim, v.len())?;
        let mut off = 0;
        let mut take = |d: usize| {
            let s = Stats {
                mean: v[off..off + d].to_vec(),
                std: v[off + d..off + 2 * d].to_vec(),
            };
            off += 2 * d;
            s
        };
        let n = Self {
            state: take(state_dim),
            action: take(action_dim),
            delta: take(state_dim),
        };
        n.validate()?;
        Ok(n)
    }
}
