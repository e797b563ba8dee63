//! The learned dynamics model: a perceptron mapping normalized
//! `[state; action; context]` to the normalized state delta.

mod normalizer;
mod transition;

pub use normalizer::{Normalizer, Stats, STD_FLOOR};
pub use transition::{append_ndjson, read_ndjson, write_ndjson, Transition};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::tensor::{Batch, LossGrad, Matrix, MlpArch, ParamVector};

/// Gaussian variance in normalized delta space. With `0.5` the per-dimension
/// negative log-likelihood is the squared error plus `ln(pi)/2`.
pub const DEFAULT_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Extra conditioning inputs appended after the action (recurrent context).
    pub context_dim: usize,
    /// State dimensions withheld from the network input, e.g. absolute
    /// positions the dynamics are invariant to. They are still predicted.
    pub masked_state: Vec<usize>,
    pub arch: MlpArch,
    pub normalizer: Normalizer,
    pub variance: f64,
}

impl DynamicsModel {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        Self::build(state_dim, action_dim, 0, Vec::new(), hidden)
    }

    fn build(state_dim: usize, action_dim: usize, context_dim: usize, masked: Vec<usize>, hidden: &[usize]) -> Self {
        let in_dim = state_dim - masked.len() + action_dim + context_dim;
        Self {
            state_dim,
            action_dim,
            context_dim,
            masked_state: masked,
            arch: MlpArch::new(in_dim, hidden, state_dim),
            normalizer: Normalizer::identity(state_dim, action_dim),
            variance: DEFAULT_VARIANCE,
        }
    }

    pub fn with_context(self, context_dim: usize) -> Self {
        let hidden = self.arch.hidden_dims().to_vec();
        Self {
            normalizer: self.normalizer,
            variance: self.variance,
            ..Self::build(self.state_dim, self.action_dim, context_dim, self.masked_state, &hidden)
        }
    }

    pub fn with_masked_state(self, dims: &[usize]) -> Result<Self> {
        let mut m = dims.to_vec();
        m.sort_unstable();
        m.dedup();
        if m.iter().any(|d| *d >= self.state_dim) || m.len() >= self.state_dim {
            return Err(Error::Argument(format!("invalid masked state dims {dims:?}")));
        }
        let hidden = self.arch.hidden_dims().to_vec();
        Ok(Self {
            normalizer: self.normalizer,
            variance: self.variance,
            ..Self::build(self.state_dim, self.action_dim, self.context_dim, m, &hidden)
        })
    }

    pub fn with_normalizer(mut self, n: Normalizer) -> Result<Self> {
        check_dim("normalizer state", self.state_dim, n.state_dim())?;
        check_dim("normalizer action", self.action_dim, n.action_dim())?;
        n.validate()?;
        self.normalizer = n;
        Ok(self)
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.arch.init(rng)
    }

    /// Appends the network input row for `(s, a, ctx)` to `out`.
    fn push_input(&self, s: &[f64], a: &[f64], ctx: &[f64], out: &mut Vec<f64>) {
        let n = &self.normalizer;
        let mut mask = self.masked_state.iter().peekable();
        for (d, v) in s.iter().enumerate() {
            if mask.peek() == Some(&&d) {
                mask.next();
                continue;
            }
            out.push((v - n.state.mean[d]) / n.state.std[d]);
        }
        for (d, v) in a.iter().enumerate() {
            out.push((v - n.action.mean[d]) / n.action.std[d]);
        }
        out.extend_from_slice(ctx);
    }

    fn check_inputs(&self, s: &[f64], a: &[f64], ctx: &[f64]) -> Result<()> {
        check_dim("model state", self.state_dim, s.len())?;
        check_dim("model action", self.action_dim, a.len())?;
        check_dim("model context", self.context_dim, ctx.len())?;
        if let Some(i) = s.iter().chain(a).chain(ctx).position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite model input at position {i}")));
        }
        Ok(())
    }

    /// Mean next state `s + delta`.
    pub fn predict(&self, theta: &[f64], s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.predict_with(theta, s, a, &[])
    }

    pub fn predict_with(&self, theta: &[f64], s: &[f64], a: &[f64], ctx: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(s, a, ctx)?;
        let mut x = Vec::with_capacity(self.arch.in_dim());
        self.push_input(s, a, ctx, &mut x);
        let z = self.arch.forward(theta, &x)?;
        let d = self.normalizer.delta.denormalize(&z);
        Ok(s.iter().zip(d).map(|(a, b)| a + b).collect())
    }

    /// Mean next states for a batch of rows sharing one context.
    pub fn predict_batch(&self, theta: &[f64], states: &Matrix, actions: &Matrix, ctx: &[f64]) -> Result<Matrix> {
        check_dim("model state", self.state_dim, states.cols())?;
        check_dim("model action", self.action_dim, actions.cols())?;
        check_dim("model batch rows", states.rows(), actions.rows())?;
        check_dim("model context", self.context_dim, ctx.len())?;
        let mut x = Vec::with_capacity(states.rows() * self.arch.in_dim());
        for (s, a) in states.iter_rows().zip(actions.iter_rows()) {
            self.push_input(s, a, ctx, &mut x);
        }
        let x = Matrix::from_vec(states.rows(), self.arch.in_dim(), x)?;
        let mut z = self.arch.forward_batch(theta, &x)?;
        let dn = &self.normalizer.delta;
        for (zr, s) in z.as_mut_slice().chunks_exact_mut(self.state_dim).zip(states.iter_rows()) {
            for d in 0..self.state_dim {
                zr[d] = s[d] + (zr[d] * dn.std[d] + dn.mean[d]);
            }
        }
        Ok(z)
    }

    /// Regression batch: normalized inputs and normalized delta targets.
    pub fn batch(&self, data: &[Transition], ctx: &[f64]) -> Result<Batch> {
        if data.is_empty() {
            return Err(Error::Argument("empty transition batch".into()));
        }
        check_dim("model context", self.context_dim, ctx.len())?;
        let mut x = Vec::with_capacity(data.len() * self.arch.in_dim());
        let mut y = Vec::with_capacity(data.len() * self.state_dim);
        for (i, t) in data.iter().enumerate() {
            t.check(self.state_dim, self.action_dim)
                .map_err(|e| Error::Argument(format!("transition {i}: {e}")))?;
            self.push_input(&t.s, &t.a, ctx, &mut x);
            y.extend(self.normalizer.delta.normalize(&t.delta()));
        }
        Batch::new(
            Matrix::from_vec(data.len(), self.arch.in_dim(), x)?,
            Matrix::from_vec(data.len(), self.state_dim, y)?,
        )
    }

    /// Mean squared normalized-delta error over transitions and state
    /// dimensions.
    pub fn nll_loss(&self, theta: &[f64], data: &[Transition]) -> Result<f64> {
        self.arch.mse_loss(theta, &self.batch(data, &self.zero_context())?)
    }

    /// Exact Gaussian negative log-likelihood per transition and dimension.
    pub fn gaussian_nll(&self, theta: &[f64], data: &[Transition]) -> Result<f64> {
        let mse = self.nll_loss(theta, data)?;
        Ok(mse / (2.0 * self.variance) + 0.5 * (2.0 * std::f64::consts::PI * self.variance).ln())
    }

    pub fn gradient(&self, theta: &[f64], data: &[Transition]) -> Result<LossGrad> {
        self.arch.mse_grad(theta, &self.batch(data, &self.zero_context())?)
    }

    /// Length of [`Self::features`].
    pub fn feature_dim(&self) -> usize {
        2 * self.state_dim - self.masked_state.len() + self.action_dim
    }

    /// Normalized `[s; a; s_next - s]` of a transition (masked state
    /// dimensions dropped from `s`), the input of recurrent context cells.
    pub fn features(&self, t: &Transition) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_dim());
        self.push_input(&t.s, &t.a, &[], &mut out);
        out.extend(self.normalizer.delta.normalize(&t.delta()));
        out
    }

    pub fn zero_context(&self) -> Vec<f64> {
        vec![0.0; self.context_dim]
    }

    /// Iterated mean predictions; returns `actions.len() + 1` states.
    pub fn rollout(&self, theta: &[f64], ctx: &[f64], s0: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if actions.is_empty() {
            return Err(Error::Argument("rollout needs at least one action".into()));
        }
        let mut states = vec![s0.to_vec()];
        for (k, a) in actions.iter().enumerate() {
            let next = self.predict_with(theta, &states[k], a, ctx)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("rollout step", k));
            }
            states.push(next);
        }
        Ok(states)
    }
}

/// Fits a normalizer from a dataset (at least two transitions).
pub fn fit_normalizer(data: &[Transition]) -> Result<Normalizer> {
    Normalizer::fit(data)
}
