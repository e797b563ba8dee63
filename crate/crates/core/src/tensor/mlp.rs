//! Multilayer perceptron over an explicit flat parameter vector.
//!
//! Parameters are laid out layer by layer: the `in x out` weight block in
//! row-major order, followed by the `out` bias entries. Hidden layers use
//! ReLU (with derivative 0 at 0), the output layer is linear.
//!
//! Besides the forward pass and the MSE gradient this module provides the
//! exact Hessian-vector product of the MSE loss (a forward-over-reverse
//! R-operator pass), which is what differentiating through one SGD step
//! needs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::{self, Matrix};
use super::params::ParamVector;
use crate::error::{check_dim, Error, Result};

/// Inputs and regression targets, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        check_dim("batch rows", inputs.rows(), targets.rows())?;
        Ok(Self { inputs, targets })
    }

    pub fn from_pairs<X: AsRef<[f64]>, T: AsRef<[f64]>>(
        in_dim: usize,
        out_dim: usize,
        pairs: impl IntoIterator<Item = (X, T)>,
    ) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ts = Vec::new();
        for (x, t) in pairs {
            xs.push(x.as_ref().to_vec());
            ts.push(t.as_ref().to_vec());
        }
        Self::new(Matrix::from_rows(in_dim, xs)?, Matrix::from_rows(out_dim, ts)?)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Loss value together with its gradient with respect to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamVector,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl LayerSpec {
    fn weight<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.n_in * self.n_out]
    }
    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.n_out]
    }
}

/// Layer sizes of a ReLU perceptron: `[in, hidden.., out]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpArch {
    sizes: Vec<usize>,
}

/// Intermediate values of a batched forward pass.
struct Tape {
    /// `acts[l]` is the input to layer `l`.
    acts: Vec<Vec<f64>>,
    /// `pre[l]` is the pre-activation output of layer `l`.
    pre: Vec<Vec<f64>>,
    rows: usize,
}

impl MlpArch {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(in_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        Self { sizes }
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Argument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let spec = LayerSpec {
                    w: off,
                    b: off + w[0] * w[1],
                    n_in: w[0],
                    n_out: w[1],
                };
                off += w[0] * w[1] + w[1];
                spec
            })
            .collect()
    }

    /// He-normal weights on hidden layers, `1/sqrt(fan_in)` scaling on the
    /// output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::zeros(self.param_count());
        let layers = self.layers();
        let last = layers.len() - 1;
        for (l, spec) in layers.iter().enumerate() {
            let gain = if l == last { 1.0 } else { 2.0 };
            let std = (gain / spec.n_in as f64).sqrt();
            for v in &mut p[spec.w..spec.w + spec.n_in * spec.n_out] {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * std;
            }
        }
        p
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        check_dim("mlp parameters", self.param_count(), p.len())
    }

    /// Splits a parameter vector into per-layer `(weight, bias)` pairs with
    /// weights shaped `in x out`.
    pub fn unpack(&self, p: &[f64]) -> Result<Vec<(Matrix, Vec<f64>)>> {
        self.check_params(p)?;
        self.layers()
            .iter()
            .map(|s| {
                Ok((
                    Matrix::from_vec(s.n_in, s.n_out, s.weight(p).to_vec())?,
                    s.bias(p).to_vec(),
                ))
            })
            .collect()
    }

    /// Inverse of [`MlpArch::unpack`]; infers the architecture from the
    /// layer shapes and checks that they chain.
    pub fn pack(layers: &[(Matrix, Vec<f64>)]) -> Result<(Self, ParamVector)> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Argument("network needs at least one layer".into()))?;
        let mut sizes = vec![first.0.rows()];
        let mut p = Vec::new();
        for (i, (w, b)) in layers.iter().enumerate() {
            check_dim(&format!("layer {i} input"), *sizes.last().unwrap(), w.rows())?;
            check_dim(&format!("layer {i} bias"), w.cols(), b.len())?;
            sizes.push(w.cols());
            p.extend_from_slice(w.as_slice());
            p.extend_from_slice(b);
        }
        Ok((Self::from_sizes(sizes)?, ParamVector::from_vec(p)))
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.in_dim(), x.len())?;
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(p, &m)?.into_vec())
    }

    pub fn forward_batch(&self, p: &[f64], x: &Matrix) -> Result<Matrix> {
        self.check_params(p)?;
        check_dim("mlp input", self.in_dim(), x.cols())?;
        let rows = x.rows();
        let mut cur = x.as_slice().to_vec();
        let layers = self.layers();
        let last = layers.len() - 1;
        for (l, s) in layers.iter().enumerate() {
            let mut out = vec![0.0; rows * s.n_out];
            matrix::affine(&cur, s.n_in, s.weight(p), s.bias(p), &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("mlp layer", l));
            }
            if l != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = out;
        }
        Matrix::from_vec(rows, self.out_dim(), cur)
    }

    fn tape(&self, p: &[f64], x: &Matrix) -> Result<Tape> {
        self.check_params(p)?;
        check_dim("mlp input", self.in_dim(), x.cols())?;
        let rows = x.rows();
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut acts = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        acts.push(x.as_slice().to_vec());
        for (l, s) in layers.iter().enumerate() {
            let mut z = vec![0.0; rows * s.n_out];
            matrix::affine(&acts[l], s.n_in, s.weight(p), s.bias(p), &mut z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("mlp layer", l));
            }
            if l != last {
                acts.push(z.iter().map(|v| v.max(0.0)).collect());
            }
            pre.push(z);
        }
        Ok(Tape { acts, pre, rows })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        check_dim("batch inputs", self.in_dim(), batch.inputs.cols())?;
        check_dim("batch targets", self.out_dim(), batch.targets.cols())
    }

    /// Mean over samples and output dimensions of the squared error.
    pub fn mse_loss(&self, p: &[f64], batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let y = self.forward_batch(p, &batch.inputs)?;
        Ok(mse(y.as_slice(), batch.targets.as_slice()))
    }

    pub fn mse_grad(&self, p: &[f64], batch: &Batch) -> Result<LossGrad> {
        self.check_batch(batch)?;
        let tape = self.tape(p, &batch.inputs)?;
        let (lg, _) = self.backward(p, &tape, &batch.targets, false);
        Ok(lg)
    }

    /// MSE gradient plus the gradient with respect to every input entry.
    pub fn mse_grad_with_inputs(&self, p: &[f64], batch: &Batch) -> Result<(LossGrad, Matrix)> {
        self.check_batch(batch)?;
        let tape = self.tape(p, &batch.inputs)?;
        let (lg, dx) = self.backward(p, &tape, &batch.targets, true);
        Ok((lg, Matrix::from_vec(tape.rows, self.in_dim(), dx.unwrap())?))
    }

    fn output_residual_scale(&self, rows: usize) -> f64 {
        2.0 / (rows * self.out_dim()) as f64
    }

    fn backward(&self, p: &[f64], tape: &Tape, targets: &Matrix, want_inputs: bool) -> (LossGrad, Option<Vec<f64>>) {
        let layers = self.layers();
        let last = layers.len() - 1;
        let y = &tape.pre[last];
        let loss = mse(y, targets.as_slice());
        let scale = self.output_residual_scale(tape.rows);
        let mut g: Vec<f64> = y
            .iter()
            .zip(targets.as_slice())
            .map(|(a, t)| scale * (a - t))
            .collect();
        let mut grad = ParamVector::zeros(self.param_count());
        let mut dx = None;
        for l in (0..layers.len()).rev() {
            let s = layers[l];
            matrix::add_xt_y(&tape.acts[l], s.n_in, &g, s.n_out, &mut grad[s.w..s.b]);
            matrix::add_colsum(&g, s.n_out, &mut grad[s.b..s.b + s.n_out]);
            if l > 0 || want_inputs {
                let mut da = vec![0.0; tape.rows * s.n_in];
                matrix::mul_wt(&g, s.n_out, s.weight(p), s.n_in, &mut da);
                if l > 0 {
                    relu_mask(&mut da, &tape.pre[l - 1]);
                    g = da;
                } else {
                    dx = Some(da);
                }
            }
        }
        (LossGrad { loss, grad }, dx)
    }

    /// Hessian of the MSE loss at `p` applied to the direction `v`.
    pub fn mse_hvp(&self, p: &[f64], batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        self.check_batch(batch)?;
        check_dim("hvp direction", self.param_count(), v.len())?;
        let tape = self.tape(p, &batch.inputs)?;
        let rows = tape.rows;
        let layers = self.layers();
        let last = layers.len() - 1;

        // Forward R-pass: r_acts[l] = R{input of layer l}, r_pre[l] = R{Z_l}.
        let mut r_acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        let mut r_pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        r_acts.push(vec![0.0; rows * self.in_dim()]);
        for (l, s) in layers.iter().enumerate() {
            let mut rz = vec![0.0; rows * s.n_out];
            matrix::affine(&tape.acts[l], s.n_in, s.weight(v), s.bias(v), &mut rz);
            if l > 0 {
                matrix::affine_acc(&r_acts[l], s.n_in, s.weight(p), s.n_out, &mut rz);
            }
            if l != last {
                let mut ra = rz.clone();
                relu_mask(&mut ra, &tape.pre[l]);
                r_acts.push(ra);
            }
            r_pre.push(rz);
        }

        // Backward pass carrying both G = dL/dZ and R{G}.
        let scale = self.output_residual_scale(rows);
        let mut g: Vec<f64> = tape.pre[last]
            .iter()
            .zip(batch.targets.as_slice())
            .map(|(a, t)| scale * (a - t))
            .collect();
        let mut rg: Vec<f64> = r_pre[last].iter().map(|v| scale * v).collect();
        let mut hv = ParamVector::zeros(self.param_count());
        for l in (0..layers.len()).rev() {
            let s = layers[l];
            {
                let w_block = &mut hv[s.w..s.b];
                matrix::add_xt_y(&r_acts[l], s.n_in, &g, s.n_out, w_block);
                matrix::add_xt_y(&tape.acts[l], s.n_in, &rg, s.n_out, w_block);
            }
            matrix::add_colsum(&rg, s.n_out, &mut hv[s.b..s.b + s.n_out]);
            if l > 0 {
                let mut da = vec![0.0; rows * s.n_in];
                matrix::mul_wt(&g, s.n_out, s.weight(p), s.n_in, &mut da);
                let mut rda = vec![0.0; rows * s.n_in];
                matrix::mul_wt(&rg, s.n_out, s.weight(p), s.n_in, &mut rda);
                matrix::mul_wt_acc(&g, s.n_out, s.weight(v), s.n_in, &mut rda);
                // ReLU'' = 0, so R{mask} vanishes.
                relu_mask(&mut da, &tape.pre[l - 1]);
                relu_mask(&mut rda, &tape.pre[l - 1]);
                g = da;
                rg = rda;
            }
        }
        Ok(hv)
    }
}

fn relu_mask(values: &mut [f64], pre: &[f64]) {
    for (v, z) in values.iter_mut().zip(pre) {
        if *z <= 0.0 {
            *v = 0.0;
        }
    }
}

pub(crate) fn mse(y: &[f64], t: &[f64]) -> f64 {
    let sum: f64 = y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / y.len() as f64
}

/// A perceptron bundled with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    arch: MlpArch,
    params: ParamVector,
}

impl Mlp {
    pub fn new(arch: MlpArch, params: ParamVector) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: MlpArch) -> Self {
        let params = ParamVector::zeros(arch.param_count());
        Self { arch, params }
    }

    pub fn random<R: Rng + ?Sized>(arch: MlpArch, rng: &mut R) -> Self {
        let params = arch.init(rng);
        Self { arch, params }
    }

    pub fn from_layers(layers: &[(Matrix, Vec<f64>)]) -> Result<Self> {
        let (arch, params) = MlpArch::pack(layers)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.arch.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn layers(&self) -> Vec<(Matrix, Vec<f64>)> {
        self.arch.unpack(&self.params).expect("parameters match architecture")
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.arch.forward(&self.params, x)
    }

    pub fn mse_grad(&self, batch: &Batch) -> Result<LossGrad> {
        self.arch.mse_grad(&self.params, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn param_count_and_layout() {
        let arch = MlpArch::new(3, &[4, 5], 2);
        assert_eq!(arch.param_count(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        let mut rng = seed::rng_from(1);
        let p = arch.init(&mut rng);
        let layers = arch.unpack(&p).unwrap();
        let (arch2, p2) = MlpArch::pack(&layers).unwrap();
        assert_eq!(arch2, arch);
        assert_eq!(p2, p);
    }

    #[test]
    fn pack_rejects_broken_chain() {
        let l0 = (Matrix::zeros(2, 3), vec![0.0; 3]);
        let l1 = (Matrix::zeros(4, 1), vec![0.0; 1]);
        assert!(MlpArch::pack(&[l0, l1]).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(MlpArch::new(3, &[8, 8], 2));
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let net = Mlp::from_layers(&[(Matrix::identity(2), vec![0.0, 0.0])]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn wrong_input_length_names_dims() {
        let net = Mlp::zeros(MlpArch::new(3, &[4], 2));
        match net.forward(&[1.0]) {
            Err(Error::Dimension { expected, actual, .. }) => {
                assert_eq!((expected, actual), (3, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = Mlp::zeros(MlpArch::new(2, &[4], 2));
        let b = Batch::new(Matrix::zeros(0, 2), Matrix::zeros(0, 2)).unwrap();
        assert!(matches!(net.mse_grad(&b), Err(Error::Argument(_))));
    }

    #[test]
    fn non_finite_reports_layer() {
        let arch = MlpArch::new(1, &[2], 1);
        let mut p = ParamVector::zeros(arch.param_count());
        // bias of the output layer
        let n = p.len();
        p[n - 1] = f64::NAN;
        match arch.forward(&p, &[1.0]) {
            Err(Error::Numeric { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
