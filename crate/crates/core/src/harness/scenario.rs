use serde::{Deserialize, Serialize};

use crate::env::{EnvDistribution, EnvInstance, EnvSource, Family, Split};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Nominal configuration for the first half of the episode, then a
    /// switch to a test configuration.
    FastAdaptation,
    /// A test configuration for the whole episode.
    Generalization,
}

impl ScenarioKind {
    pub fn key(self) -> &'static str {
        match self {
            Self::FastAdaptation => "fast_adaptation",
            Self::Generalization => "generalization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::FastAdaptation, Self::Generalization].into_iter().find(|k| k.key() == s)
    }
}

/// Test-time episodes of a distribution. Also an [`EnvSource`], which is
/// how the oracle trains on exactly the test environments.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub dist: EnvDistribution,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, dist: EnvDistribution) -> Result<Self> {
        dist.validate()?;
        Ok(Self { kind, dist })
    }

    /// Evaluation environment for `seed`; identical across methods.
    pub fn instance(&self, master: u64, seed_v: u64) -> Result<EnvInstance> {
        self.sample_instance(&mut seed::rng(master, "eval_env", seed_v))
    }
}

impl EnvSource for Scenario {
    fn family(&self) -> &Family {
        &self.dist.family
    }

    fn sample_instance(&self, rng: &mut seed::Rng) -> Result<EnvInstance> {
        let d = &self.dist;
        match self.kind {
            ScenarioKind::Generalization => {
                let base = d.test.sample(rng);
                EnvInstance::new(d.family.clone(), base, Vec::new(), rng_seed(rng), d.noise_sigma, d.horizon)
            }
            ScenarioKind::FastAdaptation => {
                let base = d.family.physics().nominal_config();
                let after = d.test.sample(rng);
                let schedule = vec![(d.horizon / 2, after)];
                EnvInstance::new(d.family.clone(), base, schedule, rng_seed(rng), d.noise_sigma, d.horizon)
            }
        }
    }
}

fn rng_seed(rng: &mut seed::Rng) -> u64 {
    use rand::Rng;
    rng.random()
}

/// The test split of a distribution as a source.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSplit<'a>(pub &'a EnvDistribution);

impl EnvSource for TestSplit<'_> {
    fn family(&self) -> &Family {
        &self.0.family
    }
    fn sample_instance(&self, rng: &mut seed::Rng) -> Result<EnvInstance> {
        self.0.sample_env(Split::Test, rng)
    }
}
