//! Analytic environments whose dynamics depend on a hidden configuration
//! vector drawn from a distribution, optionally switching mid-episode.

mod cart;
mod hopper;
mod reacher;
mod slope_car;

pub use cart::PayloadCart;
pub use hopper::PlanarHopper;
pub use reacher::Reacher2Link;
pub use slope_car::SlopeCar;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::seed;

/// Deterministic, noise-free dynamics and reward of one family.
pub trait Physics {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn config_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn nominal_config(&self) -> Vec<f64>;
    fn nominal_state(&self) -> Vec<f64>;
    /// Per-dimension std of the Gaussian initial-state distribution.
    fn init_std(&self) -> Vec<f64>;
    fn velocity_dims(&self) -> Vec<usize>;
    /// State dimensions the dynamics are invariant to shifting.
    fn translation_dims(&self) -> Vec<usize>;

    fn step(&self, cfg: &[f64], s: &[f64], a: &[f64]) -> Vec<f64>;
    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64;

    /// Recomputes derived state entries after an external change.
    fn finish_state(&self, _s: &mut [f64]) {}

    /// The episode ends early in this state (e.g. the body fell over).
    fn terminated(&self, _s: &[f64]) -> bool {
        false
    }

    fn noise_dim(&self) -> usize {
        self.velocity_dims().len()
    }

    /// Applies process noise (one draw per [`Physics::noise_dim`]).
    fn perturb(&self, _cfg: &[f64], s: &mut [f64], noise: &[f64]) {
        for (d, n) in self.velocity_dims().into_iter().zip(noise) {
            s[d] += n;
        }
    }
}

/// One of the built-in environment families with its physical constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Family {
    PlanarHopper(#[serde(default)] PlanarHopper),
    SlopeCar(#[serde(default)] SlopeCar),
    #[serde(rename = "reacher2link")]
    Reacher2Link(#[serde(default)] Reacher2Link),
    PayloadCart(#[serde(default)] PayloadCart),
}

impl Family {
    pub fn physics(&self) -> &dyn Physics {
        match self {
            Family::PlanarHopper(p) => p,
            Family::SlopeCar(p) => p,
            Family::Reacher2Link(p) => p,
            Family::PayloadCart(p) => p,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "planar_hopper" => Family::PlanarHopper(PlanarHopper::default()),
            "slope_car" => Family::SlopeCar(SlopeCar::default()),
            "reacher2link" => Family::Reacher2Link(Reacher2Link::default()),
            "payload_cart" => Family::PayloadCart(PayloadCart::default()),
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        self.physics().name()
    }

    pub fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        self.physics().reward(s, a, s_next)
    }
}

/// Distribution over configuration vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfigSampler {
    Fixed { value: Vec<f64> },
    /// Independent uniform draw per dimension.
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Uniform choice among listed configurations.
    Choice { options: Vec<Vec<f64>> },
    /// Two-dimensional vector with uniform direction and uniform magnitude
    /// in `[magnitude[0], magnitude[1]]`.
    Polar { magnitude: [f64; 2] },
}

impl ConfigSampler {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let err = |m: String| Err(Error::config("sampler", m));
        match self {
            ConfigSampler::Fixed { value } => check_dim("fixed configuration", dim, value.len()),
            ConfigSampler::Uniform { low, high } => {
                check_dim("uniform low", dim, low.len())?;
                check_dim("uniform high", dim, high.len())?;
                match low.iter().zip(high).position(|(l, h)| !(l <= h)) {
                    Some(i) => err(format!("empty range in dimension {i}")),
                    None => Ok(()),
                }
            }
            ConfigSampler::Choice { options } => {
                if options.is_empty() {
                    return err("no options to choose from".into());
                }
                options.iter().try_for_each(|o| check_dim("choice option", dim, o.len()))
            }
            ConfigSampler::Polar { magnitude } => {
                check_dim("polar configuration", 2, dim)?;
                if !(0.0 <= magnitude[0] && magnitude[0] <= magnitude[1]) {
                    return err(format!("bad magnitude range {magnitude:?}"));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ConfigSampler::Fixed { value } => value.clone(),
            ConfigSampler::Uniform { low, high } => low
                .iter()
                .zip(high)
                .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
                .collect(),
            ConfigSampler::Choice { options } => options[rng.random_range(0..options.len())].clone(),
            ConfigSampler::Polar { magnitude } => {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let m = if magnitude[0] == magnitude[1] {
                    magnitude[0]
                } else {
                    rng.random_range(magnitude[0]..magnitude[1])
                };
                vec![m * ang.cos(), m * ang.sin()]
            }
        }
    }

    /// Per-dimension bounding box of the support.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ConfigSampler::Fixed { value } => (value.clone(), value.clone()),
            ConfigSampler::Uniform { low, high } => (low.clone(), high.clone()),
            ConfigSampler::Choice { options } => {
                let mut lo = options[0].clone();
                let mut hi = options[0].clone();
                for o in options {
                    for d in 0..o.len() {
                        lo[d] = lo[d].min(o[d]);
                        hi[d] = hi[d].max(o[d]);
                    }
                }
                (lo, hi)
            }
            ConfigSampler::Polar { magnitude } => (vec![-magnitude[1]; 2], vec![magnitude[1]; 2]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A family together with train and test configuration distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDistribution {
    pub family: Family,
    pub train: ConfigSampler,
    pub test: ConfigSampler,
    /// Whether the test distribution may leave the training bounding box.
    #[serde(default)]
    pub extrapolation: bool,
    /// Resample the configuration every this many steps within an episode.
    #[serde(default)]
    pub switch_every: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Episode length.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_noise() -> f64 {
    0.005
}

fn default_horizon() -> usize {
    200
}

impl EnvDistribution {
    pub fn new(family: Family, train: ConfigSampler, test: ConfigSampler) -> Self {
        Self {
            family,
            train,
            test,
            extrapolation: false,
            switch_every: None,
            noise_sigma: default_noise(),
            horizon: default_horizon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.family.physics().config_dim();
        self.train.validate(dim)?;
        self.test.validate(dim)?;
        if !self.extrapolation {
            let (tl, th) = self.train.bounds();
            let (el, eh) = self.test.bounds();
            let inside = (0..dim).all(|d| tl[d] <= el[d] && eh[d] <= th[d]);
            if !inside {
                return Err(Error::config(
                    "env.test",
                    "test distribution leaves the training range; set extrapolation = true",
                ));
            }
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("env.noise_sigma", "must be non-negative"));
        }
        Ok(())
    }

    pub fn sampler(&self, split: Split) -> &ConfigSampler {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Draws a configuration (and switch schedule) and builds an instance
    /// whose own noise stream is seeded from `rng`.
    pub fn sample_env<R: Rng + ?Sized>(&self, split: Split, rng: &mut R) -> Result<EnvInstance> {
        let sampler = self.sampler(split);
        sampler.validate(self.family.physics().config_dim())?;
        let base = sampler.sample(rng);
        let mut schedule = Vec::new();
        if let Some(n) = self.switch_every.filter(|n| *n > 0) {
            let mut t = n;
            while t < self.horizon {
                schedule.push((t, sampler.sample(rng)));
                t += n;
            }
        }
        EnvInstance::new(self.family.clone(), base, schedule, rng.random(), self.noise_sigma, self.horizon)
    }
}

/// Anything that can hand out environment instances for data collection.
pub trait EnvSource {
    fn family(&self) -> &Family;
    fn sample_instance(&self, rng: &mut seed::Rng) -> Result<EnvInstance>;
}

/// Training split of a distribution.
impl EnvSource for EnvDistribution {
    fn family(&self) -> &Family {
        &self.family
    }
    fn sample_instance(&self, rng: &mut seed::Rng) -> Result<EnvInstance> {
        self.sample_env(Split::Train, rng)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub s_next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The state became non-finite; the episode ends.
    pub fault: bool,
}

/// A running environment with its hidden configuration.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    family: Family,
    base_config: Vec<f64>,
    schedule: Vec<(usize, Vec<f64>)>,
    config: Vec<f64>,
    state: Vec<f64>,
    t: usize,
    seed: u64,
    rng: seed::Rng,
    noise_sigma: f64,
    init_std: Vec<f64>,
    horizon: usize,
}

impl EnvInstance {
    /// `schedule` lists `(t, config)` pairs: `config` governs steps `t..`.
    pub fn new(
        family: Family,
        base_config: Vec<f64>,
        mut schedule: Vec<(usize, Vec<f64>)>,
        seed: u64,
        noise_sigma: f64,
        horizon: usize,
    ) -> Result<Self> {
        let ph = family.physics();
        check_dim("environment configuration", ph.config_dim(), base_config.len())?;
        for (_, c) in &schedule {
            check_dim("scheduled configuration", ph.config_dim(), c.len())?;
        }
        schedule.sort_by_key(|(t, _)| *t);
        let init_std = ph.init_std();
        let mut env = Self {
            config: base_config.clone(),
            state: ph.nominal_state(),
            family,
            base_config,
            schedule,
            t: 0,
            seed,
            rng: seed::rng_from(seed),
            noise_sigma,
            init_std,
            horizon,
        };
        env.reset();
        Ok(env)
    }

    pub fn with_init_std(mut self, std: Vec<f64>) -> Result<Self> {
        check_dim("initial state std", self.family.physics().state_dim(), std.len())?;
        self.init_std = std;
        self.reset();
        Ok(self)
    }

    /// Same configuration and schedule with a fresh noise stream.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut env = self.clone();
        env.seed = seed;
        env.reset();
        env
    }

    /// Same instance with a different episode length.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn state_dim(&self) -> usize {
        self.family.physics().state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.family.physics().action_dim()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn base_config(&self) -> &[f64] {
        &self.base_config
    }

    pub fn schedule(&self) -> &[(usize, Vec<f64>)] {
        &self.schedule
    }

    /// Hidden configuration governing the next step. For tests and reports
    /// only; agents never see it.
    pub fn probe_config(&self) -> &[f64] {
        &self.config
    }

    fn config_at(&self, t: usize) -> &[f64] {
        self.schedule
            .iter()
            .rev()
            .find(|(s, _)| *s <= t)
            .map_or(&self.base_config, |(_, c)| c)
    }

    /// Rewinds time, the schedule and the noise stream, and draws `s0`.
    pub fn reset(&mut self) -> Vec<f64> {
        self.rng = seed::rng_from(self.seed);
        self.t = 0;
        self.config = self.config_at(0).to_vec();
        let ph = self.family.physics();
        let mut s = ph.nominal_state();
        for (v, sd) in s.iter_mut().zip(&self.init_std) {
            if *sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v += sd * z;
            }
        }
        ph.finish_state(&mut s);
        self.state = s.clone();
        s
    }

    pub fn step(&mut self, a: &[f64]) -> Result<StepOutcome> {
        let ph = self.family.physics();
        check_dim("action", ph.action_dim(), a.len())?;
        let clipped: Vec<f64> = a.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        if clipped.iter().zip(a).any(|(c, v)| c != v) {
            log::warn!("action {a:?} clipped to bounds");
        }
        let mut s_next = ph.step(&self.config, &self.state, &clipped);
        if self.noise_sigma > 0.0 {
            let noise: Vec<f64> = (0..ph.noise_dim())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    self.noise_sigma * z
                })
                .collect();
            ph.perturb(&self.config, &mut s_next, &noise);
        }
        let fault = s_next.iter().any(|v| !v.is_finite());
        let reward = if fault {
            0.0
        } else {
            ph.reward(&self.state, &clipped, &s_next)
        };
        self.t += 1;
        self.config = self.config_at(self.t).to_vec();
        if !fault {
            self.state = s_next.clone();
        }
        Ok(StepOutcome {
            s_next,
            reward,
            done: fault || self.t >= self.horizon || ph.terminated(&self.state),
            fault,
        })
    }
}
