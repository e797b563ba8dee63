use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::loss::meta_gradient;
use super::params::MetaParams;
use crate::error::{check_dim, Result};
use crate::model::DynamicsModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// First-order optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n } else { 0 };
        Self {
            kind,
            lr,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            steps: 0,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("optimizer gradient", params.len(), grad.len())?;
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                check_dim("optimizer state", params.len(), self.m.len())?;
                let b1 = 1.0 - BETA1.powi(self.steps as i32);
                let b2 = 1.0 - BETA2.powi(self.steps as i32);
                for i in 0..params.len() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let mh = self.m[i] / b1;
                    let vh = self.v[i] / b2;
                    params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }

    /// `[steps, m.., v..]`, for checkpoints.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![self.steps as f64];
        out.extend(&self.m);
        out.extend(&self.v);
        out
    }

    pub fn restore(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("optimizer state", 1 + self.m.len() + self.v.len(), flat.len())?;
        self.steps = flat[0] as u64;
        let n = self.m.len();
        self.m.copy_from_slice(&flat[1..1 + n]);
        self.v.copy_from_slice(&flat[1 + n..]);
        Ok(())
    }
}

/// Segment and step-size settings of the gradient phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m: usize,
    pub k: usize,
    /// Step size for `theta`.
    pub outer_lr: f64,
    /// Step size for the adaptation parameters.
    pub psi_lr: f64,
    /// Segments per meta-batch.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Meta-loss of the sampled batch before the update.
    pub loss: f64,
}

/// Applies meta-gradient steps to a [`MetaParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrainer {
    pub cfg: TrainConfig,
    pub theta_opt: Optimizer,
    pub psi_opt: Optimizer,
}

impl MetaTrainer {
    pub fn new(cfg: TrainConfig, meta: &MetaParams) -> Self {
        Self {
            theta_opt: Optimizer::new(cfg.optimizer, cfg.outer_lr, meta.theta.len()),
            psi_opt: Optimizer::new(cfg.optimizer, cfg.psi_lr, meta.rule.psi().len()),
            cfg,
        }
    }

    /// Samples `batch_size` segments and takes one step on the meta-loss.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        meta: &mut MetaParams,
        model: &DynamicsModel,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<StepReport> {
        let segs = buffer.sample(self.cfg.batch_size, self.cfg.m, self.cfg.k, rng)?;
        let g = meta_gradient(meta, model, &segs)?;
        self.theta_opt.apply(&mut meta.theta, &g.theta)?;
        if !g.psi.is_empty() {
            self.psi_opt.apply(meta.rule.psi_mut(), &g.psi)?;
        }
        Ok(StepReport { loss: g.loss })
    }

    /// Number of steps that make one pass over the buffer's legal segments.
    pub fn steps_per_epoch(&self, buffer: &ReplayBuffer) -> usize {
        (buffer.legal_positions(self.cfg.m, self.cfg.k) / self.cfg.batch_size.max(1)).max(1)
    }
}

/// One meta-gradient step, returning the pre-step loss.
pub fn meta_train_step<R: Rng + ?Sized>(
    trainer: &mut MetaTrainer,
    meta: &mut MetaParams,
    model: &DynamicsModel,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<StepReport> {
    trainer.step(meta, model, buffer, rng)
}
