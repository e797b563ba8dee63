use serde::{Deserialize, Serialize};

use super::Physics;

/// Two-link planar arm with point masses at the elbow and the tip, no
/// gravity, viscous joint damping, and a constant external force on the
/// end effector.
///
/// State `[q1, q2, dq1, dq2, ee_x, ee_y]`, action joint torques scaled by
/// `max_torque`, config `[fx, fy]`. Each step integrates `substeps`
/// semi-implicit Euler substeps of
///
/// ```text
/// M(q) ddq = tau - c(q, dq) - b dq + J(q)^T f
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reacher2Link {
    pub dt: f64,
    pub substeps: usize,
    pub link: [f64; 2],
    pub mass: [f64; 2],
    pub damping: f64,
    pub max_torque: f64,
    pub goal: [f64; 2],
    /// Joint angles at reset.
    pub start: [f64; 2],
}

impl Default for Reacher2Link {
    fn default() -> Self {
        Self {
            dt: 0.02,
            substeps: 128,
            link: [0.5, 0.5],
            mass: [1.0, 1.0],
            damping: 1.0,
            max_torque: 6.0,
            goal: [0.5, 0.5],
            start: [0.3, 1.2],
        }
    }
}

impl Reacher2Link {
    pub fn end_effector(&self, q1: f64, q2: f64) -> [f64; 2] {
        let [l1, l2] = self.link;
        [
            l1 * q1.cos() + l2 * (q1 + q2).cos(),
            l1 * q1.sin() + l2 * (q1 + q2).sin(),
        ]
    }

    /// Joint accelerations for the continuous-time dynamics.
    pub fn accel(&self, force: &[f64], q: [f64; 2], dq: [f64; 2], tau: [f64; 2]) -> [f64; 2] {
        let [l1, l2] = self.link;
        let [m1, m2] = self.mass;
        let (c2, s2) = (q[1].cos(), q[1].sin());
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        let h = m2 * l1 * l2 * s2;
        let cor1 = -h * (2.0 * dq[0] * dq[1] + dq[1] * dq[1]);
        let cor2 = h * dq[0] * dq[0];
        let s1 = q[0].sin();
        let c1 = q[0].cos();
        let s12 = (q[0] + q[1]).sin();
        let c12 = (q[0] + q[1]).cos();
        // J^T f with J = [[-l1 s1 - l2 s12, -l2 s12], [l1 c1 + l2 c12, l2 c12]]
        let ext1 = (-l1 * s1 - l2 * s12) * force[0] + (l1 * c1 + l2 * c12) * force[1];
        let ext2 = -l2 * s12 * force[0] + l2 * c12 * force[1];
        let r1 = tau[0] - cor1 - self.damping * dq[0] + ext1;
        let r2 = tau[1] - cor2 - self.damping * dq[1] + ext2;
        let det = m11 * m22 - m12 * m12;
        [(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det]
    }
}

impl Physics for Reacher2Link {
    fn name(&self) -> &'static str {
        "reacher2link"
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
        vec![0.0, 0.0]
    }
    fn nominal_state(&self) -> Vec<f64> {
        let [q1, q2] = self.start;
        let ee = self.end_effector(q1, q2);
        vec![q1, q2, 0.0, 0.0, ee[0], ee[1]]
    }
    fn init_std(&self) -> Vec<f64> {
        vec![0.1, 0.1, 0.05, 0.05, 0.0, 0.0]
    }
    fn velocity_dims(&self) -> Vec<usize> {
        vec![2, 3]
    }
    fn translation_dims(&self) -> Vec<usize> {
        Vec::new()
    }

    fn finish_state(&self, s: &mut [f64]) {
        let ee = self.end_effector(s[0], s[1]);
        s[4] = ee[0];
        s[5] = ee[1];
    }

    fn step(&self, cfg: &[f64], s: &[f64], a: &[f64]) -> Vec<f64> {
        let tau = [self.max_torque * a[0], self.max_torque * a[1]];
        let h = self.dt / self.substeps as f64;
        let mut q = [s[0], s[1]];
        let mut dq = [s[2], s[3]];
        for _ in 0..self.substeps {
            let acc = self.accel(cfg, q, dq, tau);
            dq[0] += h * acc[0];
            dq[1] += h * acc[1];
            q[0] += h * dq[0];
            q[1] += h * dq[1];
        }
        let ee = self.end_effector(q[0], q[1]);
        vec![q[0], q[1], dq[0], dq[1], ee[0], ee[1]]
    }

    fn reward(&self, _s: &[f64], _a: &[f64], s_next: &[f64]) -> f64 {
        let dx = s_next[4] - self.goal[0];
        let dy = s_next[5] - self.goal[1];
        -(dx * dx + dy * dy)
    }
}
