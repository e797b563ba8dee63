use serde::{Deserialize, Serialize};

use super::Physics;

/// Point-mass car on piecewise-linear terrain made of 1 m segments.
///
/// State `[x, y, vx, vy]` (the velocity is always tangent to the ground),
/// action `[throttle]`, config `[drag, angle_0, .., angle_{n-1}]` with one
/// slope angle in radians per segment starting at `x = 0`. The terrain
/// extends the first and last angle beyond its ends.
///
/// The speed along the surface is integrated semi-implicitly and the
/// position advanced with the mean of old and new speed, which conserves
/// mechanical energy exactly on a single frictionless segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlopeCar {
    pub dt: f64,
    pub gravity: f64,
    pub max_force: f64,
    pub segment_length: f64,
    pub segments: usize,
    pub ctrl_cost: f64,
}

impl Default for SlopeCar {
    fn default() -> Self {
        Self {
            dt: 0.02,
            gravity: 9.81,
            max_force: 5.0,
            segment_length: 1.0,
            segments: 8,
            ctrl_cost: 0.05,
        }
    }
}

impl SlopeCar {
    fn angle(&self, cfg: &[f64], x: f64) -> f64 {
        let angles = &cfg[1..];
        let i = (x / self.segment_length).floor();
        let i = i.clamp(0.0, (angles.len() - 1) as f64) as usize;
        angles[i]
    }

    /// Terrain height with `height(0) = 0`.
    pub fn height(&self, cfg: &[f64], x: f64) -> f64 {
        let angles = &cfg[1..];
        let n = angles.len();
        let l = self.segment_length;
        if x <= 0.0 {
            return x * angles[0].tan();
        }
        let mut h = 0.0;
        for (i, a) in angles.iter().enumerate() {
            let lo = i as f64 * l;
            let hi = if i + 1 == n { f64::INFINITY } else { lo + l };
            if x <= lo {
                break;
            }
            h += (x.min(hi) - lo) * a.tan();
        }
        h
    }

    fn speed(&self, cfg: &[f64], s: &[f64]) -> f64 {
        let th = self.angle(cfg, s[0]);
        s[2] * th.cos() + s[3] * th.sin()
    }

    fn state(&self, cfg: &[f64], x: f64, v: f64) -> Vec<f64> {
        let th = self.angle(cfg, x);
        vec![x, self.height(cfg, x), v * th.cos(), v * th.sin()]
    }

    /// Kinetic plus potential energy per unit mass.
    pub fn energy(&self, s: &[f64]) -> f64 {
        0.5 * (s[2] * s[2] + s[3] * s[3]) + self.gravity * s[1]
    }
}

impl Physics for SlopeCar {
    fn name(&self) -> &'static str {
        "slope_car"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn config_dim(&self) -> usize {
        1 + self.segments
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn nominal_config(&self) -> Vec<f64> {
        let mut c = vec![0.5];
        c.extend(std::iter::repeat_n(0.0, self.segments));
        c
    }
    fn nominal_state(&self) -> Vec<f64> {
        vec![0.0; 4]
    }
    fn init_std(&self) -> Vec<f64> {
        vec![0.0; 4]
    }
    fn velocity_dims(&self) -> Vec<usize> {
        vec![2, 3]
    }
    fn translation_dims(&self) -> Vec<usize> {
        Vec::new()
    }

    fn step(&self, cfg: &[f64], s: &[f64], a: &[f64]) -> Vec<f64> {
        let drag = cfg[0];
        let th = self.angle(cfg, s[0]);
        let v = self.speed(cfg, s);
        let acc = self.max_force * a[0] - self.gravity * th.sin() - drag * v;
        let v2 = v + self.dt * acc;
        let x2 = s[0] + self.dt * 0.5 * (v + v2) * th.cos();
        self.state(cfg, x2, v2)
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn perturb(&self, cfg: &[f64], s: &mut [f64], noise: &[f64]) {
        let v = self.speed(cfg, s) + noise[0];
        let fixed = self.state(cfg, s[0], v);
        s.copy_from_slice(&fixed);
    }

    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        (s_next[0] - s[0]) / self.dt - self.ctrl_cost * a[0] * a[0]
    }
}
