//! Meta-learned neural dynamics models that adapt online from the most
//! recent transitions, and the sampling-based model-predictive control,
//! environments and experiment harness around them.

pub mod config;
pub mod control;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod env;
pub mod meta;
pub mod model;
pub mod run;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
