//! Independent reference implementations used as test oracles. Nothing in
//! here calls into the library's numerical kernels.
#![allow(dead_code)]

/// Scalar-loop forward pass of a ReLU perceptron given per-layer weights
/// `w[l][i][o]` (fan_in x fan_out) and biases `b[l][o]`.
pub fn reference_mlp(w: &[Vec<Vec<f64>>], b: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for l in 0..w.len() {
        let n_out = b[l].len();
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut s = b[l][o];
            for i in 0..a.len() {
                s += a[i] * w[l][i][o];
            }
            z[o] = s;
        }
        if l + 1 < w.len() {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    a
}

/// Splits a flat parameter vector with layout `[W (in x out) row-major, b]`
/// per layer into nested vectors.
pub fn split_mlp(sizes: &[usize], p: &[f64]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let mut ws = Vec::new();
    let mut bs = Vec::new();
    let mut off = 0;
    for win in sizes.windows(2) {
        let (ni, no) = (win[0], win[1]);
        let mut w = vec![vec![0.0; no]; ni];
        for i in 0..ni {
            for o in 0..no {
                w[i][o] = p[off + i * no + o];
            }
        }
        off += ni * no;
        ws.push(w);
        bs.push(p[off..off + no].to_vec());
        off += no;
    }
    (ws, bs)
}

pub fn reference_mse(sizes: &[usize], p: &[f64], xs: &[Vec<f64>], ts: &[Vec<f64>]) -> f64 {
    let (w, b) = split_mlp(sizes, p);
    let mut s = 0.0;
    let mut n = 0;
    for (x, t) in xs.iter().zip(ts) {
        let y = reference_mlp(&w, &b, x);
        for (a, c) in y.iter().zip(t) {
            s += (a - c) * (a - c);
            n += 1;
        }
    }
    s / n as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar reference GRU unroll. Layout `Wz Uz bz Wr Ur br Wn Un bn Wo bo`.
/// Returns per-step readouts and the final hidden state.
pub fn reference_gru(
    in_dim: usize,
    hid: usize,
    out: usize,
    p: &[f64],
    inputs: &[Vec<f64>],
    h0: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut off = 0;
    let mut take = |n: usize| {
        let s = off;
        off += n;
        s
    };
    let mut gates = Vec::new();
    for _ in 0..3 {
        let w = take(in_dim * hid);
        let u = take(hid * hid);
        let b = take(hid);
        gates.push((w, u, b));
    }
    let wo = take(hid * out);
    let bo = take(out);
    let lin = |g: (usize, usize, usize), x: &[f64], h: &[f64], k: usize| {
        let mut s = p[g.2 + k];
        for i in 0..in_dim {
            s += x[i] * p[g.0 + i * hid + k];
        }
        for j in 0..hid {
            s += h[j] * p[g.1 + j * hid + k];
        }
        s
    };
    let mut h = h0.to_vec();
    let mut ys = Vec::new();
    for x in inputs {
        let z: Vec<f64> = (0..hid).map(|k| sigmoid(lin(gates[0], x, &h, k))).collect();
        let r: Vec<f64> = (0..hid).map(|k| sigmoid(lin(gates[1], x, &h, k))).collect();
        let rh: Vec<f64> = (0..hid).map(|k| r[k] * h[k]).collect();
        let n: Vec<f64> = (0..hid).map(|k| lin(gates[2], x, &rh, k).tanh()).collect();
        h = (0..hid).map(|k| (1.0 - z[k]) * n[k] + z[k] * h[k]).collect();
        let y: Vec<f64> = (0..out)
            .map(|o| {
                let mut s = p[bo + o];
                for j in 0..hid {
                    s += h[j] * p[wo + j * out + o];
                }
                s
            })
            .collect();
        ys.push(y);
    }
    (ys, h)
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error, with `floor` guarding the
/// denominator of coordinates whose true value is ~0.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Small deterministic generator (splitmix64) so oracles do not share the
/// library's random streams.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }
    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}

/// Smallest |pre-activation| over all hidden units for the given inputs;
/// finite-difference checks keep away from ReLU kinks.
pub fn min_hidden_preact(sizes: &[usize], p: &[f64], xs: &[Vec<f64>]) -> f64 {
    let (w, b) = split_mlp(sizes, p);
    let mut m = f64::INFINITY;
    for x in xs {
        let mut a = x.clone();
        for l in 0..w.len() - 1 {
            let n_out = b[l].len();
            let mut z = vec![0.0; n_out];
            for o in 0..n_out {
                let mut s = b[l][o];
                for i in 0..a.len() {
                    s += a[i] * w[l][i][o];
                }
                z[o] = s;
                m = m.min(s.abs());
            }
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    m
}

/// Two-link arm with point masses at elbow and tip, written out from the
/// Lagrangian, integrated with classical RK4 at `n` substeps per `dt`.
pub fn reacher_rk4(
    link: [f64; 2],
    mass: [f64; 2],
    damping: f64,
    force: [f64; 2],
    tau: [f64; 2],
    s: [f64; 4],
    dt: f64,
    n: usize,
) -> [f64; 4] {
    let f = |y: [f64; 4]| -> [f64; 4] {
        let (q1, q2, w1, w2) = (y[0], y[1], y[2], y[3]);
        let (l1, l2) = (link[0], link[1]);
        let (m1, m2) = (mass[0], mass[1]);
        // elbow position p1, tip p2; kinetic energy T = m1|p1'|^2/2 + m2|p2'|^2/2
        let a = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * q2.cos());
        let b = m2 * (l2 * l2 + l1 * l2 * q2.cos());
        let d = m2 * l2 * l2;
        let k = m2 * l1 * l2 * q2.sin();
        // generalized force of the tip force: J^T f
        let jx1 = -l1 * q1.sin() - l2 * (q1 + q2).sin();
        let jy1 = l1 * q1.cos() + l2 * (q1 + q2).cos();
        let jx2 = -l2 * (q1 + q2).sin();
        let jy2 = l2 * (q1 + q2).cos();
        let g1 = tau[0] - damping * w1 + jx1 * force[0] + jy1 * force[1] + k * (2.0 * w1 * w2 + w2 * w2);
        let g2 = tau[1] - damping * w2 + jx2 * force[0] + jy2 * force[1] - k * w1 * w1;
        let det = a * d - b * b;
        [w1, w2, (d * g1 - b * g2) / det, (a * g2 - b * g1) / det]
    };
    let h = dt / n as f64;
    let mut y = s;
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f(std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
        let k3 = f(std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]));
        let k4 = f(std::array::from_fn(|i| y[i] + h * k3[i]));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    y
}

/// Optimal cost of the clipped 1-D double integrator
/// `v' = v + dt gain a`, `x' = x + dt v'` with stage cost
/// `qx x'^2 + qv v'^2 + ra a^2`, by backward value iteration on a state
/// grid (bilinear interpolation) and an action grid, then evaluated by
/// rolling the greedy grid policy forward on the exact system.
pub struct DpProblem {
    pub dt: f64,
    pub gain: f64,
    pub qx: f64,
    pub qv: f64,
    pub ra: f64,
    pub steps: usize,
}

impl DpProblem {
    pub fn stage_cost(&self, x: f64, v: f64, a: f64) -> f64 {
        self.qx * x * x + self.qv * v * v + self.ra * a * a
    }

    pub fn next(&self, x: f64, v: f64, a: f64) -> (f64, f64) {
        let v2 = v + self.dt * self.gain * a;
        (x + self.dt * v2, v2)
    }

    pub fn optimum(&self, x0: f64, v0: f64, half_width: f64, grid: usize, actions: usize) -> f64 {
        let cell = 2.0 * half_width / (grid - 1) as f64;
        let acts: Vec<f64> = (0..actions).map(|i| -1.0 + 2.0 * i as f64 / (actions - 1) as f64).collect();
        let interp = |vals: &[f64], x: f64, v: f64| -> f64 {
            let fx = ((x + half_width) / cell).clamp(0.0, (grid - 1) as f64 - 1e-9);
            let fv = ((v + half_width) / cell).clamp(0.0, (grid - 1) as f64 - 1e-9);
            let (i, j) = (fx.floor() as usize, fv.floor() as usize);
            let (tx, tv) = (fx - i as f64, fv - j as f64);
            let at = |i: usize, j: usize| vals[i * grid + j];
            (1.0 - tx) * (1.0 - tv) * at(i, j)
                + tx * (1.0 - tv) * at(i + 1, j)
                + (1.0 - tx) * tv * at(i, j + 1)
                + tx * tv * at(i + 1, j + 1)
        };
        let coord = |i: usize| -half_width + i as f64 * cell;
        let mut values = vec![vec![0.0; grid * grid]; self.steps + 1];
        for k in (0..self.steps).rev() {
            let (done, todo) = values.split_at_mut(k + 1);
            let next = &todo[0];
            let cur = &mut done[k];
            for i in 0..grid {
                for j in 0..grid {
                    let (x, v) = (coord(i), coord(j));
                    cur[i * grid + j] = acts
                        .iter()
                        .map(|&a| {
                            let (x2, v2) = self.next(x, v, a);
                            self.stage_cost(x2, v2, a) + interp(next, x2, v2)
                        })
                        .fold(f64::INFINITY, f64::min);
                }
            }
        }
        let (mut x, mut v) = (x0, v0);
        let mut total = 0.0;
        for k in 0..self.steps {
            let mut best = (f64::INFINITY, 0.0);
            for &a in &acts {
                let (x2, v2) = self.next(x, v, a);
                let q = self.stage_cost(x2, v2, a) + interp(&values[k + 1], x2, v2);
                if q < best.0 {
                    best = (q, a);
                }
            }
            let (x2, v2) = self.next(x, v, best.1);
            total += self.stage_cost(x2, v2, best.1);
            x = x2;
            v = v2;
        }
        total
    }
}
