use serde::{Deserialize, Serialize};

use super::Physics;

/// Planar body with a main thruster (actuator 0) and a pitch-torque
/// actuator (actuator 1).
///
/// State `[x, z, phi, vx, vz, omega]`, action `[u0, u1]` in `[-1, 1]`, config
/// `[g0, g1]` multiplying each actuator (0 = crippled). The thrust line
/// passes below the centre of mass, so thrust also pitches the nose up;
/// the torque actuator cancels that moment against a restoring pitch
/// stiffness:
///
/// ```text
/// omega' = k_m u0 + k_tau u1 - k_s sin(phi) - c_omega omega
/// vx'    = k_f u0 cos(phi) - c_x vx
/// vz'    = -k_z (z - 1) - c_z vz + k_lift u0 sin(phi)
/// ```
///
/// With the torque actuator crippled, thrust above `k_s / k_m` has no pitch
/// equilibrium and the body flips; the episode ends once `|phi|` exceeds
/// `fall_angle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanarHopper {
    pub dt: f64,
    pub k_f: f64,
    pub c_x: f64,
    pub k_m: f64,
    pub k_tau: f64,
    pub k_s: f64,
    pub c_omega: f64,
    pub k_z: f64,
    pub c_z: f64,
    pub k_lift: f64,
    pub ctrl_cost: f64,
    pub alive_bonus: f64,
    pub fall_angle: f64,
}

impl Default for PlanarHopper {
    fn default() -> Self {
        Self {
            dt: 0.01,
            k_f: 5.0,
            c_x: 2.5,
            k_m: 200.0,
            k_tau: 300.0,
            k_s: 100.0,
            c_omega: 20.0,
            k_z: 100.0,
            c_z: 20.0,
            k_lift: 1.0,
            ctrl_cost: 0.05,
            alive_bonus: 0.05,
            fall_angle: 1.5,
        }
    }
}

impl Physics for PlanarHopper {
    fn name(&self) -> &'static str {
        "planar_hopper"
    }
    fn state_dim(&self) -> usize {
        6
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn config_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn nominal_config(&self) -> Vec<f64> {
        vec![1.0, 1.0]
    }
    fn nominal_state(&self) -> Vec<f64> {
        vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    }
    fn init_std(&self) -> Vec<f64> {
        vec![0.0, 0.01, 0.02, 0.02, 0.01, 0.05]
    }
    fn velocity_dims(&self) -> Vec<usize> {
        vec![3, 4, 5]
    }
    fn translation_dims(&self) -> Vec<usize> {
        vec![0]
    }

    fn step(&self, cfg: &[f64], s: &[f64], a: &[f64]) -> Vec<f64> {
        let u0 = cfg[0] * a[0];
        let u1 = cfg[1] * a[1];
        let (x, z, phi, vx, vz, om) = (s[0], s[1], s[2], s[3], s[4], s[5]);
        let dt = self.dt;
        let om2 = om + dt * (self.k_m * u0 + self.k_tau * u1 - self.k_s * phi.sin() - self.c_omega * om);
        let vx2 = vx + dt * (self.k_f * u0 * phi.cos() - self.c_x * vx);
        let vz2 = vz + dt * (-self.k_z * (z - 1.0) - self.c_z * vz + self.k_lift * u0 * phi.sin());
        vec![x + dt * vx2, z + dt * vz2, phi + dt * om2, vx2, vz2, om2]
    }

    fn terminated(&self, s: &[f64]) -> bool {
        s[2].abs() > self.fall_angle
    }

    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        let a2: f64 = a.iter().map(|v| v * v).sum();
        (s_next[0] - s[0]) / self.dt - self.ctrl_cost * a2 + self.alive_bonus
    }
}
