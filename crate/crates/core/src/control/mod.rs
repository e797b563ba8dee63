//! Sampling-based model-predictive control (MPPI and random shooting) and
//! the online-adaptation episode loop.

mod episode;
mod planner;

pub use episode::{
    recent, run_adaptive_episode, run_episode, run_random_episode, EpisodeResult, StepChoice, StepLog,
};
pub use planner::{
    argmax_first, evaluate, mppi_update, mppi_weights, plan_mppi, plan_random_shooting, sample_perturbed,
    sample_uniform, shift_warm_start, Candidates, Controller, ControllerConfig, Decision, Dynamics, ModelDynamics,
    MppiPlan, PlannerKind, ShootingPlan, Task,
};

use crate::error::{check_dim, Result};
use crate::tensor::Matrix;

/// Exact 1-D double integrator `v' = v + dt * gain * a`, `x' = x + dt * v'`;
/// a planning benchmark with a known model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegrator {
    pub dt: f64,
    pub gain: f64,
}

impl DoubleIntegrator {
    pub fn step(&self, s: &[f64], a: f64) -> [f64; 2] {
        let v = s[1] + self.dt * self.gain * a.clamp(-1.0, 1.0);
        [s[0] + self.dt * v, v]
    }
}

impl Dynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn step_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        check_dim("double integrator state", 2, states.cols())?;
        check_dim("double integrator rows", states.rows(), actions.rows())?;
        let mut out = Matrix::zeros(states.rows(), 2);
        for i in 0..states.rows() {
            out.row_mut(i).copy_from_slice(&self.step(states.row(i), actions.get(i, 0)));
        }
        Ok(out)
    }
}
