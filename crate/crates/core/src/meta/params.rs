use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{DynamicsModel, Normalizer, Transition};
use crate::tensor::{adapt, Checkpoint, GruArch, InnerRate, ParamVector};

/// How the prior is adapted to recent data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdaptRule {
    /// No adaptation (plain model-based baseline).
    None,
    /// One SGD step on the recent transitions with rate `rate`.
    Gradient { rate: InnerRate },
    /// GRU over recent transitions; its final hidden state is appended to
    /// the prediction-head input.
    Recurrent { arch: GruArch, params: ParamVector },
}

impl AdaptRule {
    pub fn name(&self) -> &'static str {
        match self {
            AdaptRule::None => "none",
            AdaptRule::Gradient { .. } => "gradient",
            AdaptRule::Recurrent { .. } => "recurrent",
        }
    }

    /// Adaptation parameters as one flat slice (empty for `None`).
    pub fn psi(&self) -> &[f64] {
        match self {
            AdaptRule::None => &[],
            AdaptRule::Gradient { rate } => rate.as_slice(),
            AdaptRule::Recurrent { params, .. } => params,
        }
    }

    pub fn psi_mut(&mut self) -> &mut [f64] {
        match self {
            AdaptRule::None => &mut [],
            AdaptRule::Gradient { rate } => rate.as_mut_slice(),
            AdaptRule::Recurrent { params, .. } => params,
        }
    }
}

/// The meta-learned prior `theta` and adaptation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    pub theta: ParamVector,
    pub rule: AdaptRule,
}

/// Parameters (and context) after adapting to a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub theta: ParamVector,
    pub context: Vec<f64>,
    /// False when no adaptation took place (no rule or no data yet).
    pub adapted: bool,
}

/// `theta - rate * grad MSE(slice)`: one step up the log-likelihood.
pub fn grbal_update(model: &DynamicsModel, theta: &[f64], rate: &InnerRate, slice: &[Transition]) -> Result<ParamVector> {
    if slice.is_empty() {
        return Err(Error::Argument("empty adaptation slice".into()));
    }
    let batch = model.batch(slice, &model.zero_context())?;
    adapt(&model.arch, theta, &batch, rate)
}

/// Final hidden state of the cell unrolled over the slice's normalized
/// `(s, a, s_next - s)` features from a zero state.
pub fn rebal_update(model: &DynamicsModel, arch: &GruArch, params: &[f64], slice: &[Transition]) -> Result<Vec<f64>> {
    if slice.is_empty() {
        return Err(Error::Argument("empty adaptation slice".into()));
    }
    check_dim("recurrent cell input", model.feature_dim(), arch.in_dim)?;
    check_dim("recurrent context", model.context_dim, arch.hidden_dim)?;
    let inputs = context_inputs(model, slice)?;
    let (_, h) = arch.forward(params, &inputs, &vec![0.0; arch.hidden_dim])?;
    Ok(h)
}

pub(crate) fn context_inputs(model: &DynamicsModel, slice: &[Transition]) -> Result<crate::tensor::Matrix> {
    crate::tensor::Matrix::from_rows(model.feature_dim(), slice.iter().map(|t| model.features(t)))
}

impl MetaParams {
    pub fn plain(theta: ParamVector) -> Self {
        Self {
            theta,
            rule: AdaptRule::None,
        }
    }

    pub fn check(&self, model: &DynamicsModel) -> Result<()> {
        check_dim("theta", model.param_count(), self.theta.len())?;
        match &self.rule {
            AdaptRule::None => check_dim("model context", 0, model.context_dim),
            AdaptRule::Gradient { rate } => {
                check_dim("model context", 0, model.context_dim)?;
                if let InnerRate::PerParam(v) = rate {
                    check_dim("per-parameter rate", model.param_count(), v.len())?;
                }
                Ok(())
            }
            AdaptRule::Recurrent { arch, params } => {
                check_dim("recurrent parameters", arch.param_count(), params.len())?;
                check_dim("recurrent context", model.context_dim, arch.hidden_dim)?;
                check_dim("recurrent cell input", model.feature_dim(), arch.in_dim)
            }
        }
    }

    /// Adapts to `recent`. An empty slice leaves the prior untouched.
    pub fn adapt(&self, model: &DynamicsModel, recent: &[Transition]) -> Result<Adapted> {
        if recent.is_empty() {
            return Ok(self.unadapted(model));
        }
        match &self.rule {
            AdaptRule::None => Ok(self.unadapted(model)),
            AdaptRule::Gradient { rate } => Ok(Adapted {
                theta: grbal_update(model, &self.theta, rate, recent)?,
                context: Vec::new(),
                adapted: true,
            }),
            AdaptRule::Recurrent { arch, params } => Ok(Adapted {
                theta: self.theta.clone(),
                context: rebal_update(model, arch, params, recent)?,
                adapted: true,
            }),
        }
    }

    pub fn unadapted(&self, model: &DynamicsModel) -> Adapted {
        Adapted {
            theta: self.theta.clone(),
            context: model.zero_context(),
            adapted: false,
        }
    }

    /// Checkpoint with blocks `theta`, `psi` and `normalizer`; the model
    /// description and rule metadata go in the header next to `extra`.
    pub fn to_checkpoint(&self, model: &DynamicsModel, extra: serde_json::Value) -> Result<Checkpoint> {
        self.check(model)?;
        let rule_meta = match &self.rule {
            AdaptRule::None => serde_json::json!({"kind": "none"}),
            AdaptRule::Gradient { rate } => serde_json::json!({
                "kind": "gradient",
                "mode": match rate { InnerRate::Scalar(_) => "scalar", InnerRate::PerParam(_) => "per_param" },
            }),
            AdaptRule::Recurrent { arch, .. } => serde_json::json!({"kind": "recurrent", "arch": arch}),
        };
        let mut described = model.clone();
        described.normalizer = Normalizer::identity(model.state_dim, model.action_dim);
        let meta = serde_json::json!({
            "model": described,
            "rule": rule_meta,
            "extra": extra,
        });
        Ok(Checkpoint::new(meta)
            .with_block("theta", &self.theta)
            .with_block("psi", self.rule.psi())
            .with_block("normalizer", &model.normalizer.to_flat()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, DynamicsModel)> {
        let meta = &ck.header.metadata;
        let bad = |what: &str| Error::Artifact(format!("checkpoint metadata: {what}"));
        let model: DynamicsModel =
            serde_json::from_value(meta.get("model").cloned().ok_or_else(|| bad("missing model"))?)
                .map_err(|e| bad(&e.to_string()))?;
        let normalizer = Normalizer::from_flat(model.state_dim, model.action_dim, ck.block("normalizer")?)
            .map_err(|e| bad(&e.to_string()))?;
        let model = model.with_normalizer(normalizer)?;
        let theta = ParamVector::from_vec(ck.block("theta")?.to_vec());
        let psi = ck.block("psi")?.to_vec();
        let rule = meta.get("rule").ok_or_else(|| bad("missing rule"))?;
        let rule = match rule.get("kind").and_then(|k| k.as_str()) {
            Some("none") => AdaptRule::None,
            Some("gradient") => match rule.get("mode").and_then(|k| k.as_str()) {
                Some("scalar") if psi.len() == 1 => AdaptRule::Gradient {
                    rate: InnerRate::Scalar(psi[0]),
                },
                Some("per_param") => AdaptRule::Gradient {
                    rate: InnerRate::PerParam(psi.into()),
                },
                _ => return Err(bad("bad gradient rule")),
            },
            Some("recurrent") => {
                let arch: GruArch = serde_json::from_value(rule.get("arch").cloned().unwrap_or_default())
                    .map_err(|e| bad(&e.to_string()))?;
                AdaptRule::Recurrent {
                    arch,
                    params: psi.into(),
                }
            }
            _ => return Err(bad("unknown rule kind")),
        };
        let mp = MetaParams { theta, rule };
        mp.check(&model).map_err(|e| bad(&e.to_string()))?;
        Ok((mp, model))
    }

    pub fn save(&self, model: &DynamicsModel, extra: serde_json::Value, path: &Path) -> Result<()> {
        self.to_checkpoint(model, extra)?.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, DynamicsModel, serde_json::Value)> {
        let ck = Checkpoint::load(path)?;
        let (mp, model) = Self::from_checkpoint(&ck)?;
        let extra = ck.header.metadata.get("extra").cloned().unwrap_or_default();
        Ok((mp, model, extra))
    }
}
