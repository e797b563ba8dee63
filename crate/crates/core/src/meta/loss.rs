use super::buffer::Segment;
use super::params::{context_inputs, AdaptRule, MetaParams};
use crate::error::{Error, Result};
use crate::model::DynamicsModel;
use crate::tensor::{grad_through_update, mean_of, ParamVector};

/// Loss and gradients of the meta-objective for a set of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGrad {
    pub loss: f64,
    pub theta: ParamVector,
    /// Gradient for the adaptation parameters, same layout as
    /// [`AdaptRule::psi`].
    pub psi: ParamVector,
}

fn checked<'a>(i: usize, seg: &Segment<'a>) -> Result<()> {
    seg.validate()
        .map_err(|e| Error::Argument(format!("segment {i} (episode {}): {e}", seg.episode)))
}

/// Evaluation-slice loss of one segment after adapting on its adaptation
/// slice (or with the prior itself when `adapt` is false).
pub fn segment_loss(meta: &MetaParams, model: &DynamicsModel, seg: &Segment<'_>, adapt: bool) -> Result<f64> {
    let a = if adapt {
        meta.adapt(model, seg.adapt)?
    } else {
        meta.unadapted(model)
    };
    model.arch.mse_loss(&a.theta, &model.batch(seg.eval, &a.context)?)
}

/// Mean over segments of the post-adaptation evaluation loss.
pub fn meta_loss(meta: &MetaParams, model: &DynamicsModel, segments: &[Segment<'_>]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::Argument("no segments".into()));
    }
    let mut total = 0.0;
    for (i, s) in segments.iter().enumerate() {
        checked(i, s)?;
        total += segment_loss(meta, model, s, true)?;
    }
    Ok(total / segments.len() as f64)
}

/// Gradient of one segment's loss with respect to `theta` and the
/// adaptation parameters.
pub fn segment_gradient(meta: &MetaParams, model: &DynamicsModel, seg: &Segment<'_>) -> Result<MetaGrad> {
    match &meta.rule {
        AdaptRule::None => {
            let g = model.arch.mse_grad(&meta.theta, &model.batch(seg.eval, &[])?)?;
            Ok(MetaGrad {
                loss: g.loss,
                theta: g.grad,
                psi: ParamVector::zeros(0),
            })
        }
        AdaptRule::Gradient { rate } => {
            let inner = model.batch(seg.adapt, &[])?;
            let outer = model.batch(seg.eval, &[])?;
            let g = grad_through_update(&model.arch, &meta.theta, &inner, &outer, rate)?;
            Ok(MetaGrad {
                loss: g.outer_loss,
                theta: g.theta,
                psi: ParamVector::from_vec(g.rate.as_slice().to_vec()),
            })
        }
        AdaptRule::Recurrent { arch, params } => {
            if seg.adapt.is_empty() {
                return Err(Error::Argument("empty adaptation slice".into()));
            }
            let inputs = context_inputs(model, seg.adapt)?;
            let unroll = arch.unroll(params, &inputs, &vec![0.0; arch.hidden_dim])?;
            let ctx = &unroll.hidden;
            let (g, dx) = model
                .arch
                .mse_grad_with_inputs(&meta.theta, &model.batch(seg.eval, ctx)?)?;
            let c0 = model.arch.in_dim() - model.context_dim;
            let mut d_ctx = vec![0.0; model.context_dim];
            for row in dx.iter_rows() {
                for (d, v) in d_ctx.iter_mut().zip(&row[c0..]) {
                    *d += v;
                }
            }
            let (d_psi, _) = arch.backward(params, &unroll, None, &d_ctx)?;
            Ok(MetaGrad {
                loss: g.loss,
                theta: g.grad,
                psi: d_psi,
            })
        }
    }
}

/// Mean loss and mean gradient over segments, reduced in segment order.
pub fn meta_gradient(meta: &MetaParams, model: &DynamicsModel, segments: &[Segment<'_>]) -> Result<MetaGrad> {
    if segments.is_empty() {
        return Err(Error::Argument("no segments".into()));
    }
    let mut losses = 0.0;
    let mut thetas = Vec::with_capacity(segments.len());
    let mut psis = Vec::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        checked(i, s)?;
        let g = segment_gradient(meta, model, s)?;
        losses += g.loss;
        thetas.push(g.theta);
        psis.push(g.psi);
    }
    Ok(MetaGrad {
        loss: losses / segments.len() as f64,
        theta: mean_of(&thetas).expect("non-empty"),
        psi: mean_of(&psis).expect("non-empty"),
    })
}
