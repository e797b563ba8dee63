//! Differentiating an outer loss through one inner SGD step.
//!
//! The adapted parameters are `theta' = theta - rate * grad L_in(theta)`
//! (elementwise when the rate is per-parameter). For the outer loss
//! `L_out(theta')`:
//!
//! ```text
//! dL/dtheta = g_out - H_in (rate * g_out)
//! dL/drate  = -g_out * g_in          (summed over parameters in scalar mode)
//! ```
//!
//! with `g_in = grad L_in(theta)`, `g_out = grad L_out(theta')` and `H_in`
//! the Hessian of the inner loss at `theta`.

use serde::{Deserialize, Serialize};

use super::mlp::{Batch, MlpArch};
use super::params::ParamVector;
use crate::error::{check_dim, Error, Result};

/// Step size of the inner update: one shared scalar or one per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum InnerRate {
    Scalar(f64),
    PerParam(ParamVector),
}

impl InnerRate {
    pub fn len(&self) -> usize {
        match self {
            InnerRate::Scalar(_) => 1,
            InnerRate::PerParam(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            InnerRate::Scalar(v) => std::slice::from_ref(v),
            InnerRate::PerParam(v) => v,
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            InnerRate::Scalar(v) => std::slice::from_mut(v),
            InnerRate::PerParam(v) => v,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            InnerRate::Scalar(_) => InnerRate::Scalar(0.0),
            InnerRate::PerParam(v) => InnerRate::PerParam(ParamVector::zeros(v.len())),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            InnerRate::Scalar(_) => Ok(()),
            InnerRate::PerParam(v) => check_dim("per-parameter rate", n, v.len()),
        }
    }

    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            InnerRate::Scalar(v) => *v,
            InnerRate::PerParam(v) => v[i],
        }
    }

    /// `theta - rate * grad`
    pub fn step(&self, theta: &[f64], grad: &[f64]) -> Result<ParamVector> {
        check_dim("inner step gradient", theta.len(), grad.len())?;
        self.check(theta.len())?;
        Ok(theta
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (t, g))| t - self.at(i) * g)
            .collect::<Vec<_>>()
            .into())
    }
}

/// Gradient of the outer loss after one inner step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub inner_loss: f64,
    pub outer_loss: f64,
    pub theta: ParamVector,
    /// Same shape as the rate it differentiates.
    pub rate: InnerRate,
}

/// One SGD step on `inner` from `theta`.
pub fn adapt(arch: &MlpArch, theta: &[f64], inner: &Batch, rate: &InnerRate) -> Result<ParamVector> {
    let g = arch.mse_grad(theta, inner)?;
    rate.step(theta, &g.grad)
}

/// Full second-order gradient of `L_out(theta - rate * grad L_in(theta))`
/// with respect to `theta` and `rate`.
pub fn grad_through_update(
    arch: &MlpArch,
    theta: &[f64],
    inner: &Batch,
    outer: &Batch,
    rate: &InnerRate,
) -> Result<MetaGradient> {
    rate.check(theta.len())?;
    let g_in = arch.mse_grad(theta, inner)?;
    let adapted = rate.step(theta, &g_in.grad)?;
    if let Some(i) = adapted.first_non_finite() {
        return Err(Error::numeric("adapted parameters", i));
    }
    let g_out = arch.mse_grad(&adapted, outer)?;

    let direction: Vec<f64> = g_out.grad.iter().enumerate().map(|(i, g)| rate.at(i) * g).collect();
    let hv = arch.mse_hvp(theta, inner, &direction)?;
    let mut d_theta = g_out.grad.clone();
    for (d, h) in d_theta.iter_mut().zip(hv.iter()) {
        *d -= h;
    }

    let d_rate = match rate {
        InnerRate::Scalar(_) => InnerRate::Scalar(-g_out.grad.dot(&g_in.grad)),
        InnerRate::PerParam(_) => InnerRate::PerParam(
            g_out
                .grad
                .iter()
                .zip(g_in.grad.iter())
                .map(|(o, i)| -o * i)
                .collect::<Vec<_>>()
                .into(),
        ),
    };
    Ok(MetaGradient {
        inner_loss: g_in.loss,
        outer_loss: g_out.loss,
        theta: d_theta,
        rate: d_rate,
    })
}
