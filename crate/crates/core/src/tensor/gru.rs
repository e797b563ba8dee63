//! Gated recurrent unit with a linear readout, and backpropagation through
//! time.
//!
//! ```text
//! z  = sigmoid(x Wz + h Uz + bz)
//! r  = sigmoid(x Wr + h Ur + br)
//! n  = tanh(x Wn + (r * h) Un + bn)
//! h' = (1 - z) * n + z * h
//! y  = h' Wo + bo
//! ```
//!
//! Parameter order: `Wz Uz bz Wr Ur br Wn Un bn Wo bo`, each weight block
//! row-major with shape `fan_in x fan_out`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::LossGrad;
use super::params::ParamVector;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GruArch {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wn: usize,
    un: usize,
    bn: usize,
    wo: usize,
    bo: usize,
    end: usize,
}

/// Per-step values kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
}

/// Result of unrolling the cell over a sequence.
#[derive(Debug, Clone)]
pub struct Unroll {
    pub outputs: Matrix,
    pub hidden: Vec<f64>,
    steps: Vec<StepCache>,
}

/// One training sequence: inputs and per-step readout targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Matrix,
    pub targets: Matrix,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += x W` for a single row.
fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n_out = out.len();
    for (xi, wr) in x.iter().zip(w.chunks_exact(n_out)) {
        for (o, wv) in out.iter_mut().zip(wr) {
            *o += xi * wv;
        }
    }
}

/// `out += d W^T` for a single row (`W: n_in x n_out`).
fn vec_mat_t_acc(d: &[f64], w: &[f64], out: &mut [f64]) {
    let n_out = d.len();
    for (o, wr) in out.iter_mut().zip(w.chunks_exact(n_out)) {
        *o += wr.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `acc += x^T d` for single rows.
fn outer_acc(x: &[f64], d: &[f64], acc: &mut [f64]) {
    let n_out = d.len();
    for (xi, ar) in x.iter().zip(acc.chunks_exact_mut(n_out)) {
        for (a, dv) in ar.iter_mut().zip(d) {
            *a += xi * dv;
        }
    }
}

fn add_to(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl GruArch {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden_dim,
            out_dim,
        }
    }

    fn offsets(&self) -> Offsets {
        let (i, h, o) = (self.in_dim, self.hidden_dim, self.out_dim);
        let gate = i * h + h * h + h;
        let wz = 0;
        let uz = wz + i * h;
        let bz = uz + h * h;
        let wr = wz + gate;
        let ur = wr + i * h;
        let br = ur + h * h;
        let wn = wr + gate;
        let un = wn + i * h;
        let bn = un + h * h;
        let wo = wn + gate;
        let bo = wo + h * o;
        Offsets {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
            wo,
            bo,
            end: bo + o,
        }
    }

    pub fn param_count(&self) -> usize {
        self.offsets().end
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let o = self.offsets();
        let (i, h) = (self.in_dim as f64, self.hidden_dim as f64);
        let mut p = ParamVector::zeros(o.end);
        let blocks = [
            (o.wz, o.uz, i),
            (o.uz, o.bz, h),
            (o.wr, o.ur, i),
            (o.ur, o.br, h),
            (o.wn, o.un, i),
            (o.un, o.bn, h),
            (o.wo, o.bo, h),
        ];
        for (start, end, fan_in) in blocks {
            let std = 1.0 / fan_in.sqrt();
            for v in &mut p[start..end] {
                let s: f64 = StandardNormal.sample(rng);
                *v = s * std;
            }
        }
        p
    }

    fn step(&self, p: &[f64], x: &[f64], h_prev: &[f64]) -> StepCache {
        let o = self.offsets();
        let hd = self.hidden_dim;
        let i = self.in_dim;
        let mut az = p[o.bz..o.bz + hd].to_vec();
        vec_mat_acc(x, &p[o.wz..o.wz + i * hd], &mut az);
        vec_mat_acc(h_prev, &p[o.uz..o.uz + hd * hd], &mut az);
        let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();

        let mut ar = p[o.br..o.br + hd].to_vec();
        vec_mat_acc(x, &p[o.wr..o.wr + i * hd], &mut ar);
        vec_mat_acc(h_prev, &p[o.ur..o.ur + hd * hd], &mut ar);
        let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut an = p[o.bn..o.bn + hd].to_vec();
        vec_mat_acc(x, &p[o.wn..o.wn + i * hd], &mut an);
        vec_mat_acc(&rh, &p[o.un..o.un + hd * hd], &mut an);
        let n: Vec<f64> = an.iter().map(|v| v.tanh()).collect();

        let h: Vec<f64> = (0..hd).map(|k| (1.0 - z[k]) * n[k] + z[k] * h_prev[k]).collect();
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            h,
        }
    }

    fn readout(&self, p: &[f64], h: &[f64]) -> Vec<f64> {
        let o = self.offsets();
        let mut y = p[o.bo..o.bo + self.out_dim].to_vec();
        vec_mat_acc(h, &p[o.wo..o.wo + self.hidden_dim * self.out_dim], &mut y);
        y
    }

    pub fn unroll(&self, p: &[f64], inputs: &Matrix, h0: &[f64]) -> Result<Unroll> {
        check_dim("gru parameters", self.param_count(), p.len())?;
        check_dim("gru input", self.in_dim, inputs.cols())?;
        check_dim("gru initial hidden state", self.hidden_dim, h0.len())?;
        let mut h = h0.to_vec();
        let mut steps = Vec::with_capacity(inputs.rows());
        let mut outputs = Matrix::zeros(inputs.rows(), self.out_dim);
        for t in 0..inputs.rows() {
            let c = self.step(p, inputs.row(t), &h);
            if c.h.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("gru step", t));
            }
            outputs.row_mut(t).copy_from_slice(&self.readout(p, &c.h));
            h = c.h.clone();
            steps.push(c);
        }
        Ok(Unroll {
            outputs,
            hidden: h,
            steps,
        })
    }

    /// Outputs for every step and the final hidden state.
    pub fn forward(&self, p: &[f64], inputs: &Matrix, h0: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        let u = self.unroll(p, inputs, h0)?;
        Ok((u.outputs, u.hidden))
    }

    /// Backpropagation through time. `d_outputs` is the loss gradient with
    /// respect to each step's readout (rows = steps), `d_hidden` the
    /// gradient with respect to the final hidden state. Returns the
    /// parameter gradient and the gradient with respect to `h0`.
    pub fn backward(
        &self,
        p: &[f64],
        unroll: &Unroll,
        d_outputs: Option<&Matrix>,
        d_hidden: &[f64],
    ) -> Result<(ParamVector, Vec<f64>)> {
        check_dim("gru hidden gradient", self.hidden_dim, d_hidden.len())?;
        if let Some(d) = d_outputs {
            check_dim("gru output gradient rows", unroll.steps.len(), d.rows())?;
            check_dim("gru output gradient cols", self.out_dim, d.cols())?;
        }
        let o = self.offsets();
        let hd = self.hidden_dim;
        let i = self.in_dim;
        let mut grad = ParamVector::zeros(o.end);
        let mut dh = d_hidden.to_vec();
        for t in (0..unroll.steps.len()).rev() {
            let c = &unroll.steps[t];
            if let Some(d) = d_outputs {
                let dy = d.row(t);
                outer_acc(&c.h, dy, &mut grad[o.wo..o.bo]);
                add_to(&mut grad[o.bo..o.end], dy);
                vec_mat_t_acc(dy, &p[o.wo..o.bo], &mut dh);
            }
            let mut dh_prev: Vec<f64> = (0..hd).map(|k| dh[k] * c.z[k]).collect();
            let da_z: Vec<f64> = (0..hd)
                .map(|k| dh[k] * (c.h_prev[k] - c.n[k]) * c.z[k] * (1.0 - c.z[k]))
                .collect();
            let da_n: Vec<f64> = (0..hd)
                .map(|k| dh[k] * (1.0 - c.z[k]) * (1.0 - c.n[k] * c.n[k]))
                .collect();

            let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(a, b)| a * b).collect();
            outer_acc(&c.x, &da_n, &mut grad[o.wn..o.un]);
            outer_acc(&rh, &da_n, &mut grad[o.un..o.bn]);
            add_to(&mut grad[o.bn..o.wo], &da_n);
            let mut d_rh = vec![0.0; hd];
            vec_mat_t_acc(&da_n, &p[o.un..o.un + hd * hd], &mut d_rh);
            for k in 0..hd {
                dh_prev[k] += d_rh[k] * c.r[k];
            }
            let da_r: Vec<f64> = (0..hd)
                .map(|k| d_rh[k] * c.h_prev[k] * c.r[k] * (1.0 - c.r[k]))
                .collect();

            outer_acc(&c.x, &da_z, &mut grad[o.wz..o.uz]);
            outer_acc(&c.h_prev, &da_z, &mut grad[o.uz..o.bz]);
            add_to(&mut grad[o.bz..o.wr], &da_z);
            vec_mat_t_acc(&da_z, &p[o.uz..o.uz + hd * hd], &mut dh_prev);

            outer_acc(&c.x, &da_r, &mut grad[o.wr..o.ur]);
            outer_acc(&c.h_prev, &da_r, &mut grad[o.ur..o.br]);
            add_to(&mut grad[o.br..o.wn], &da_r);
            vec_mat_t_acc(&da_r, &p[o.ur..o.ur + hd * hd], &mut dh_prev);

            debug_assert_eq!(c.x.len(), i);
            dh = dh_prev;
        }
        Ok((grad, dh))
    }

    /// Per-step MSE over a set of sequences, each unrolled from a zero
    /// hidden state: mean over all steps of all sequences and all output
    /// dimensions.
    pub fn sequence_mse_grad(&self, p: &[f64], sequences: &[Sequence]) -> Result<LossGrad> {
        let total_steps: usize = sequences.iter().map(|s| s.inputs.rows()).sum();
        if total_steps == 0 {
            return Err(Error::Argument("no sequence steps".into()));
        }
        let denom = (total_steps * self.out_dim) as f64;
        let h0 = vec![0.0; self.hidden_dim];
        let mut grad = ParamVector::zeros(self.param_count());
        let mut sse = 0.0;
        for (si, seq) in sequences.iter().enumerate() {
            check_dim(&format!("sequence {si} target rows"), seq.inputs.rows(), seq.targets.rows())?;
            check_dim(&format!("sequence {si} target cols"), self.out_dim, seq.targets.cols())?;
            let u = self.unroll(p, &seq.inputs, &h0)?;
            let mut d = Matrix::zeros(u.outputs.rows(), self.out_dim);
            for (k, (y, t)) in u.outputs.as_slice().iter().zip(seq.targets.as_slice()).enumerate() {
                sse += (y - t) * (y - t);
                d.as_mut_slice()[k] = 2.0 * (y - t) / denom;
            }
            let (g, _) = self.backward(p, &u, Some(&d), &vec![0.0; self.hidden_dim])?;
            grad.axpy(1.0, &g)?;
        }
        Ok(LossGrad {
            loss: sse / denom,
            grad,
        })
    }
}

/// A GRU bundled with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCell {
    arch: GruArch,
    params: ParamVector,
}

impl RecurrentCell {
    pub fn new(arch: GruArch, params: ParamVector) -> Result<Self> {
        check_dim("gru parameters", arch.param_count(), params.len())?;
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: GruArch) -> Self {
        Self {
            params: ParamVector::zeros(arch.param_count()),
            arch,
        }
    }

    pub fn random<R: Rng + ?Sized>(arch: GruArch, rng: &mut R) -> Self {
        Self {
            params: arch.init(rng),
            arch,
        }
    }

    pub fn arch(&self) -> GruArch {
        self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn forward(&self, inputs: &Matrix, h0: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        self.arch.forward(&self.params, inputs, h0)
    }

    pub fn sequence_mse_grad(&self, sequences: &[Sequence]) -> Result<LossGrad> {
        self.arch.sequence_mse_grad(&self.params, sequences)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sequence_keeps_state() {
        let cell = RecurrentCell::zeros(GruArch::new(3, 4, 2));
        let h0 = vec![0.1, -0.2, 0.3, 0.4];
        let (out, h) = cell.forward(&Matrix::zeros(0, 3), &h0).unwrap();
        assert_eq!(out.rows(), 0);
        assert_eq!(h, h0);
    }

    #[test]
    fn zero_weights_output_readout_bias() {
        let arch = GruArch::new(2, 3, 2);
        let mut p = ParamVector::zeros(arch.param_count());
        let n = p.len();
        p[n - 2] = 0.7;
        p[n - 1] = -1.5;
        let inputs = Matrix::from_rows(2, [[1.0, 2.0], [-3.0, 0.5], [9.0, 9.0]]).unwrap();
        let (out, h) = arch.forward(&p, &inputs, &[1.0, 1.0, 1.0]).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, &[0.7, -1.5]);
        }
        // z = 0.5 and n = 0, so every step halves the state
        assert_eq!(h, vec![0.125; 3]);
    }

    #[test]
    fn shape_errors() {
        let arch = GruArch::new(2, 3, 1);
        let p = ParamVector::zeros(arch.param_count());
        assert!(arch.forward(&p, &Matrix::zeros(1, 3), &[0.0; 3]).is_err());
        assert!(arch.forward(&p, &Matrix::zeros(1, 2), &[0.0; 2]).is_err());
        assert!(arch.sequence_mse_grad(&p, &[]).is_err());
    }
}
