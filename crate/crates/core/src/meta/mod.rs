//! Segment-based meta-learning of an adaptable dynamics prior.
//!
//! A segment is `M` consecutive transitions used to adapt the prior followed
//! by the next `K` transitions used to score the adapted model. Two update
//! rules are provided: one gradient step with learned per-parameter rates,
//! and a recurrent cell whose final state conditions the prediction head.

mod buffer;
mod loss;
mod outer;
mod params;
mod train;

pub use buffer::{Episode, EpisodeInfo, ReplayBuffer, Segment};
pub use loss::{meta_gradient, meta_loss, segment_gradient, segment_loss, MetaGrad};
pub use outer::{collect, fit, meta_train, meta_train_iteration, pre_post_error, LogRow, OuterConfig, TrainState};
pub use params::{grbal_update, rebal_update, AdaptRule, Adapted, MetaParams};
pub use train::{meta_train_step, MetaTrainer, Optimizer, OptimizerKind, StepReport, TrainConfig};
