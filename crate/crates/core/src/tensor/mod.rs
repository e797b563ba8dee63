//! Dense kernels and the two differentiable function approximators: a ReLU
//! perceptron and a gated recurrent cell, both with hand-derived exact
//! gradients.

pub mod checkpoint;
pub mod gru;
pub mod inner_step;
pub mod matrix;
pub mod mlp;
pub mod params;

pub use checkpoint::Checkpoint;
pub use gru::{GruArch, RecurrentCell, Sequence};
pub use inner_step::{adapt, grad_through_update, InnerRate, MetaGradient};
pub use matrix::Matrix;
pub use mlp::{Batch, LossGrad, Mlp, MlpArch};
pub use params::{mean_of, ParamVector};
