use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::DynamicsModel;
use crate::tensor::Matrix;

/// Batched one-step dynamics used for planning.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Next states for each row of `(states, actions)`.
    fn step_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix>;
}

/// A learned model evaluated at fixed (possibly adapted) parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelDynamics<'a> {
    pub model: &'a DynamicsModel,
    pub theta: &'a [f64],
    pub context: &'a [f64],
}

impl Dynamics for ModelDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.model.state_dim
    }
    fn action_dim(&self) -> usize {
        self.model.action_dim
    }
    fn step_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        self.model.predict_batch(self.theta, states, actions, self.context)
    }
}

/// Reward `r(s, a, s_next)`.
pub trait Task {
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64;
}

impl<F: Fn(&[f64], &[f64], &[f64]) -> f64> Task for F {
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        self(s, a, s_next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Mppi,
    RandomShooting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub planner: PlannerKind,
    /// Candidate sequences per step.
    pub n_a: usize,
    pub horizon: usize,
    pub temperature: f64,
    /// Per-dimension MPPI perturbation std.
    pub noise_sigma: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ControllerConfig {
    /// Defaults for actions in `[-1, 1]^dim`: temperature 1, noise
    /// `noise_scale * (high - low)`.
    pub fn unit_box(planner: PlannerKind, dim: usize, n_a: usize, horizon: usize, noise_scale: f64) -> Self {
        Self {
            planner,
            n_a,
            horizon,
            temperature: 1.0,
            noise_sigma: vec![noise_scale * 2.0; dim],
            low: vec![-1.0; dim],
            high: vec![1.0; dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_a == 0 {
            return Err(Error::config("controller.n_a", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("controller.horizon", "must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("controller.temperature", "must be positive"));
        }
        check_dim("action upper bounds", self.low.len(), self.high.len())?;
        check_dim("noise sigma", self.low.len(), self.noise_sigma.len())?;
        if self.low.iter().zip(&self.high).any(|(l, h)| !(l <= h)) {
            return Err(Error::config("controller.bounds", "low must not exceed high"));
        }
        if self.noise_sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("controller.noise_sigma", "must be positive"));
        }
        Ok(())
    }

    fn clip(&self, a: &mut [f64]) {
        for ((v, l), h) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// Candidate action sequences stored per time step: `steps[h]` has one row
/// per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub steps: Vec<Matrix>,
}

impl Candidates {
    pub fn n(&self) -> usize {
        self.steps.first().map_or(0, Matrix::rows)
    }

    /// The full sequence of candidate `i` as an `H x A` matrix.
    pub fn sequence(&self, i: usize) -> Matrix {
        let a = self.steps[0].cols();
        let mut m = Matrix::zeros(self.steps.len(), a);
        for (h, st) in self.steps.iter().enumerate() {
            m.row_mut(h).copy_from_slice(st.row(i));
        }
        m
    }
}

/// Summed reward of every candidate rolled out from `s` through `dynamics`
/// (undiscounted within the window).
pub fn evaluate<D: Dynamics + ?Sized, T: Task + ?Sized>(
    dynamics: &D,
    task: &T,
    s: &[f64],
    cands: &Candidates,
) -> Result<Vec<f64>> {
    check_dim("planner state", dynamics.state_dim(), s.len())?;
    let n = cands.n();
    let sd = s.len();
    let mut states = Matrix::from_vec(n, sd, s.repeat(n))?;
    let mut returns = vec![0.0; n];
    for acts in &cands.steps {
        check_dim("candidate actions", dynamics.action_dim(), acts.cols())?;
        let next = dynamics.step_batch(&states, acts).map_err(|e| match e {
            Error::Numeric { .. } => Error::Control(format!("model rollout diverged: {e}")),
            other => other,
        })?;
        for (i, r) in returns.iter_mut().enumerate() {
            *r += task.reward(states.row(i), acts.row(i), next.row(i));
        }
        states = next;
    }
    Ok(returns)
}

fn check_state(s: &[f64]) -> Result<()> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Control("non-finite planning state".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingPlan {
    pub action: Vec<f64>,
    pub best: usize,
    pub returns: Vec<f64>,
    pub candidates: Candidates,
}

/// Uniform candidate sequences within the bounds, drawn step-major.
pub fn sample_uniform<R: Rng + ?Sized>(cfg: &ControllerConfig, rng: &mut R) -> Candidates {
    let a = cfg.action_dim();
    let steps = (0..cfg.horizon)
        .map(|_| {
            let mut m = Matrix::zeros(cfg.n_a, a);
            for i in 0..cfg.n_a {
                for d in 0..a {
                    let (l, h) = (cfg.low[d], cfg.high[d]);
                    m.set(i, d, if l == h { l } else { rng.random_range(l..h) });
                }
            }
            m
        })
        .collect();
    Candidates { steps }
}

/// Random shooting: first action of the best of `n_a` uniform sequences.
/// Ties go to the lowest candidate index; non-finite returns never win.
pub fn plan_random_shooting<D: Dynamics + ?Sized, T: Task + ?Sized, R: Rng + ?Sized>(
    dynamics: &D,
    task: &T,
    s: &[f64],
    cfg: &ControllerConfig,
    rng: &mut R,
) -> Result<ShootingPlan> {
    cfg.validate()?;
    check_state(s)?;
    let cands = sample_uniform(cfg, rng);
    let returns = evaluate(dynamics, task, s, &cands)?;
    let best = argmax_first(&returns).ok_or_else(|| Error::Control("all candidate returns are non-finite".into()))?;
    Ok(ShootingPlan {
        action: cands.steps[0].row(best).to_vec(),
        best,
        returns,
        candidates: cands,
    })
}

/// Index of the largest finite value; the first one on ties.
pub fn argmax_first(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in v.iter().enumerate() {
        if r.is_finite() && best.is_none_or(|b| *r > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Normalized weights `exp((R_i - max R) / lambda)`.
pub fn mppi_weights(returns: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::config("controller.temperature", "must be positive"));
    }
    if returns.is_empty() {
        return Err(Error::Control("no candidates".into()));
    }
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::Control(format!("candidate {i} has a non-finite return")));
    }
    let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = returns.iter().map(|r| ((r - max) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MppiPlan {
    pub action: Vec<f64>,
    /// Weighted mean sequence (`H x A`), before shifting.
    pub mean: Matrix,
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
    pub candidates: Candidates,
}

/// Perturbs `mean` with clipped Gaussian noise, drawn step-major.
pub fn sample_perturbed<R: Rng + ?Sized>(cfg: &ControllerConfig, mean: &Matrix, rng: &mut R) -> Candidates {
    let a = cfg.action_dim();
    let steps = (0..cfg.horizon)
        .map(|h| {
            let mut m = Matrix::zeros(cfg.n_a, a);
            for i in 0..cfg.n_a {
                let row = m.row_mut(i);
                for d in 0..a {
                    let z: f64 = StandardNormal.sample(rng);
                    row[d] = mean.get(h, d) + cfg.noise_sigma[d] * z;
                }
                cfg.clip(row);
            }
            m
        })
        .collect();
    Candidates { steps }
}

/// Weighted average of the candidate sequences.
pub fn mppi_update(cands: &Candidates, weights: &[f64]) -> Result<Matrix> {
    check_dim("mppi weights", cands.n(), weights.len())?;
    let a = cands.steps[0].cols();
    let mut mean = Matrix::zeros(cands.steps.len(), a);
    for (h, st) in cands.steps.iter().enumerate() {
        let out = mean.row_mut(h);
        for (i, w) in weights.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(st.row(i)) {
                *o += w * v;
            }
        }
    }
    Ok(mean)
}

/// One MPPI iteration around the warm-start `mean` (`H x A`).
pub fn plan_mppi<D: Dynamics + ?Sized, T: Task + ?Sized, R: Rng + ?Sized>(
    dynamics: &D,
    task: &T,
    s: &[f64],
    cfg: &ControllerConfig,
    mean: &Matrix,
    rng: &mut R,
) -> Result<MppiPlan> {
    cfg.validate()?;
    check_state(s)?;
    check_dim("warm start length", cfg.horizon, mean.rows())?;
    check_dim("warm start width", cfg.action_dim(), mean.cols())?;
    let cands = sample_perturbed(cfg, mean, rng);
    let returns = evaluate(dynamics, task, s, &cands)?;
    let weights = mppi_weights(&returns, cfg.temperature)?;
    let new_mean = mppi_update(&cands, &weights)?;
    Ok(MppiPlan {
        action: new_mean.row(0).to_vec(),
        mean: new_mean,
        weights,
        returns,
        candidates: cands,
    })
}

/// Drops the first row and appends a zero row.
pub fn shift_warm_start(mean: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(mean.rows(), mean.cols());
    for h in 1..mean.rows() {
        out.row_mut(h - 1).copy_from_slice(mean.row(h));
    }
    out
}

/// Receding-horizon controller carrying the MPPI warm start between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub cfg: ControllerConfig,
    mean: Matrix,
}

/// Action chosen at one step with the planner's predicted cost (negated
/// best or weighted return).
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Vec<f64>,
    pub planner_cost: f64,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let mean = Matrix::zeros(cfg.horizon, cfg.action_dim());
        Ok(Self { cfg, mean })
    }

    pub fn reset(&mut self) {
        self.mean = Matrix::zeros(self.cfg.horizon, self.cfg.action_dim());
    }

    pub fn warm_start(&self) -> &Matrix {
        &self.mean
    }

    pub fn act<D: Dynamics + ?Sized, T: Task + ?Sized, R: Rng + ?Sized>(
        &mut self,
        dynamics: &D,
        task: &T,
        s: &[f64],
        rng: &mut R,
    ) -> Result<Decision> {
        match self.cfg.planner {
            PlannerKind::RandomShooting => {
                let p = plan_random_shooting(dynamics, task, s, &self.cfg, rng)?;
                Ok(Decision {
                    planner_cost: -p.returns[p.best],
                    action: p.action,
                })
            }
            PlannerKind::Mppi => {
                let p = plan_mppi(dynamics, task, s, &self.cfg, &self.mean, rng)?;
                self.mean = shift_warm_start(&p.mean);
                let expected: f64 = p.weights.iter().zip(&p.returns).map(|(w, r)| w * r).sum();
                Ok(Decision {
                    action: p.action,
                    planner_cost: -expected,
                })
            }
        }
    }
}
