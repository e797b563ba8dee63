use serde::{Deserialize, Serialize};

use super::Physics;

/// Cart on a rail carrying an unknown payload against unknown viscous drag.
///
/// State `[x, v]`, action `[force]` scaled by `max_force`, config
/// `[payload_mass, drag]`. Reward pulls the cart to `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadCart {
    pub dt: f64,
    pub cart_mass: f64,
    pub max_force: f64,
    pub target: f64,
    pub ctrl_cost: f64,
}

impl Default for PayloadCart {
    fn default() -> Self {
        Self {
            dt: 0.02,
            cart_mass: 1.0,
            max_force: 4.0,
            target: 1.0,
            ctrl_cost: 0.01,
        }
    }
}

impl Physics for PayloadCart {
    fn name(&self) -> &'static str {
        "payload_cart"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn config_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn nominal_config(&self) -> Vec<f64> {
        vec![0.0, 0.5]
    }
    fn nominal_state(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn init_std(&self) -> Vec<f64> {
        vec![0.05, 0.05]
    }
    fn velocity_dims(&self) -> Vec<usize> {
        vec![1]
    }
    fn translation_dims(&self) -> Vec<usize> {
        vec![0]
    }

    fn step(&self, cfg: &[f64], s: &[f64], a: &[f64]) -> Vec<f64> {
        let m = self.cart_mass + cfg[0];
        let v2 = s[1] + self.dt * (self.max_force * a[0] - cfg[1] * s[1]) / m;
        vec![s[0] + self.dt * v2, v2]
    }

    fn reward(&self, _s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        let e = s_next[0] - self.target;
        -e * e - self.ctrl_cost * a[0] * a[0]
    }
}
