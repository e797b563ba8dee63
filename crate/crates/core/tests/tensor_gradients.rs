mod common;

use common::*;
use metadyn::tensor::{
    grad_through_update, Batch, GruArch, InnerRate, Matrix, Mlp, MlpArch, ParamVector, Sequence,
};

/// Random perceptron plus a batch whose hidden pre-activations all stay at
/// least `margin` away from the ReLU kink.
fn instance(seed: u64, sizes: &[usize], batch: usize, margin: f64) -> (MlpArch, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let arch = MlpArch::from_sizes(sizes.to_vec()).unwrap();
    let mut rng = TestRng::new(seed);
    loop {
        let p = rng.vec(arch.param_count(), -0.8, 0.8);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| rng.vec(sizes[0], -1.0, 1.0)).collect();
        let ts: Vec<Vec<f64>> = (0..batch).map(|_| rng.vec(*sizes.last().unwrap(), -1.0, 1.0)).collect();
        if min_hidden_preact(sizes, &p, &xs) > margin {
            return (arch, p, xs, ts);
        }
    }
}

fn batch_of(arch: &MlpArch, xs: &[Vec<f64>], ts: &[Vec<f64>]) -> Batch {
    Batch::from_pairs(arch.in_dim(), arch.out_dim(), xs.iter().zip(ts)).unwrap()
}

#[test]
fn forward_matches_scalar_reference() {
    let sizes = [2, 4, 2];
    let arch = MlpArch::from_sizes(sizes.to_vec()).unwrap();
    let mut rng = TestRng::new(11);
    let p = rng.vec(arch.param_count(), -1.0, 1.0);
    let x = [0.5, -0.5];
    let (w, b) = split_mlp(&sizes, &p);
    let expected = reference_mlp(&w, &b, &x);
    let got = arch.forward(&p, &x).unwrap();
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-14, "{got:?} vs {expected:?}");
    }
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let (arch, p, xs, _) = instance(3, &[3, 8, 2], 5, 1e-6);
    let ts: Vec<Vec<f64>> = xs.iter().map(|x| arch.forward(&p, x).unwrap()).collect();
    let g = arch.mse_grad(&p, &batch_of(&arch, &xs, &ts)).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.grad.iter().all(|v| *v == 0.0));
}

#[test]
fn linear_layer_gradient_matches_closed_form() {
    // y = x W + b, L = |y - t|^2 / D  =>  dL/dW[i][o] = 2 x_i (y_o - t_o) / D
    let w = Matrix::from_rows(2, [[0.3, -1.2], [0.5, 0.25], [2.0, 0.0]]).unwrap();
    let b = vec![0.1, -0.4];
    let net = Mlp::from_layers(&[(w.clone(), b.clone())]).unwrap();
    let x = [1.0, -2.0, 0.5];
    let t = [0.7, 0.2];
    let g = net.mse_grad(&Batch::from_pairs(3, 2, [(x, t)]).unwrap()).unwrap();
    let y: Vec<f64> = (0..2).map(|o| b[o] + (0..3).map(|i| x[i] * w.get(i, o)).sum::<f64>()).collect();
    let mut expected = Vec::new();
    for xi in x {
        for o in 0..2 {
            expected.push(2.0 * xi * (y[o] - t[o]) / 2.0);
        }
    }
    for o in 0..2 {
        expected.push(2.0 * (y[o] - t[o]) / 2.0);
    }
    assert!(max_rel_err(&g.grad, &expected, 1e-12) < 1e-14);
}

#[test]
fn mlp_grad_matches_finite_differences() {
    let sizes = [2, 8, 2];
    for seed in 0..5 {
        let (arch, p, xs, ts) = instance(100 + seed, &sizes, 4, 1e-3);
        let g = arch.mse_grad(&p, &batch_of(&arch, &xs, &ts)).unwrap();
        let fd = central_diff(|q| reference_mse(&sizes, q, &xs, &ts), &p, 1e-5);
        let err = max_rel_err(&g.grad, &fd, 1e-6);
        assert!(err < 1e-6, "seed {seed}: rel err {err}");
    }
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let (arch, p, xs, ts) = instance(7, &[3, 16, 16, 2], 9, 0.0);
    let full = arch.mse_grad(&p, &batch_of(&arch, &xs, &ts)).unwrap();
    let mut mean = vec![0.0; p.len()];
    for (x, t) in xs.iter().zip(&ts) {
        let g = arch
            .mse_grad(&p, &Batch::from_pairs(3, 2, [(x, t)]).unwrap())
            .unwrap();
        for (m, v) in mean.iter_mut().zip(g.grad.iter()) {
            *m += v / xs.len() as f64;
        }
    }
    let err = max_rel_err(&full.grad, &mean, 1e-12);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn hvp_matches_finite_difference_of_gradient() {
    let (arch, p, xs, ts) = instance(21, &[3, 6, 5, 2], 6, 1e-3);
    let batch = batch_of(&arch, &xs, &ts);
    let mut rng = TestRng::new(5);
    let v = rng.vec(p.len(), -1.0, 1.0);
    let hv = arch.mse_hvp(&p, &batch, &v).unwrap();
    let eps = 1e-6;
    let shifted = |s: f64| {
        let q: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        arch.mse_grad(&q, &batch).unwrap().grad
    };
    let gp = shifted(eps);
    let gm = shifted(-eps);
    let fd: Vec<f64> = gp.iter().zip(gm.iter()).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    let err = max_rel_err(&hv, &fd, 1e-6);
    assert!(err < 1e-6, "{err}");
}

/// `L_out(theta - rate * grad L_in(theta))` built from the reference net.
fn composite_loss(sizes: &[usize], theta: &[f64], rate: &[f64], inner: (&[Vec<f64>], &[Vec<f64>]), outer: (&[Vec<f64>], &[Vec<f64>])) -> f64 {
    let g_in = reference_grad(sizes, theta, inner.0, inner.1);
    let adapted: Vec<f64> = theta
        .iter()
        .zip(&g_in)
        .enumerate()
        .map(|(i, (t, g))| t - rate[if rate.len() == 1 { 0 } else { i }] * g)
        .collect();
    reference_mse(sizes, &adapted, outer.0, outer.1)
}

/// Straightforward per-sample backprop with nested loops, independent of
/// the batched library kernels.
fn reference_grad(sizes: &[usize], p: &[f64], xs: &[Vec<f64>], ts: &[Vec<f64>]) -> Vec<f64> {
    let (w, b) = split_mlp(sizes, p);
    let nl = w.len();
    let out_dim = *sizes.last().unwrap();
    let scale = 2.0 / (xs.len() * out_dim) as f64;
    let mut gw: Vec<Vec<Vec<f64>>> = w.iter().map(|l| vec![vec![0.0; l[0].len()]; l.len()]).collect();
    let mut gb: Vec<Vec<f64>> = b.iter().map(|l| vec![0.0; l.len()]).collect();
    for (x, t) in xs.iter().zip(ts) {
        let mut acts = vec![x.clone()];
        let mut pres = Vec::new();
        for l in 0..nl {
            let z: Vec<f64> = (0..b[l].len())
                .map(|o| b[l][o] + (0..acts[l].len()).map(|i| acts[l][i] * w[l][i][o]).sum::<f64>())
                .collect();
            if l + 1 < nl {
                acts.push(z.iter().map(|v| v.max(0.0)).collect());
            }
            pres.push(z);
        }
        let mut d: Vec<f64> = pres[nl - 1].iter().zip(t).map(|(y, tt)| scale * (y - tt)).collect();
        for l in (0..nl).rev() {
            for i in 0..acts[l].len() {
                for o in 0..d.len() {
                    gw[l][i][o] += acts[l][i] * d[o];
                }
            }
            for o in 0..d.len() {
                gb[l][o] += d[o];
            }
            if l > 0 {
                d = (0..acts[l].len())
                    .map(|i| {
                        let s: f64 = (0..d.len()).map(|o| w[l][i][o] * d[o]).sum();
                        if pres[l - 1][i] > 0.0 { s } else { 0.0 }
                    })
                    .collect();
            }
        }
    }
    let mut flat = Vec::new();
    for l in 0..nl {
        for row in &gw[l] {
            flat.extend_from_slice(row);
        }
        flat.extend_from_slice(&gb[l]);
    }
    flat
}

#[test]
fn reference_backprop_agrees_with_finite_differences() {
    let sizes = [2, 5, 3];
    let (_, p, xs, ts) = instance(8, &sizes, 3, 1e-3);
    let g = reference_grad(&sizes, &p, &xs, &ts);
    let fd = central_diff(|q| reference_mse(&sizes, q, &xs, &ts), &p, 1e-5);
    assert!(max_rel_err(&g, &fd, 1e-6) < 1e-6);
}

#[test]
fn meta_gradient_matches_finite_differences() {
    let sizes = [2, 6, 2];
    for (seed, per_param) in [(1u64, true), (2, false), (3, true)] {
        let (arch, theta, xs, ts) = instance(300 + seed, &sizes, 8, 2e-2);
        let (ix, ox) = xs.split_at(4);
        let (it, ot) = ts.split_at(4);
        let mut rng = TestRng::new(seed);
        let rate = if per_param {
            InnerRate::PerParam(ParamVector::from_vec(rng.vec(theta.len(), 0.01, 0.1)))
        } else {
            InnerRate::Scalar(0.05)
        };
        let mg = grad_through_update(&arch, &theta, &batch_of(&arch, ix, it), &batch_of(&arch, ox, ot), &rate).unwrap();

        let r = rate.as_slice().to_vec();
        let fd_theta = central_diff(|q| composite_loss(&sizes, q, &r, (ix, it), (ox, ot)), &theta, 1e-5);
        let fd_rate = central_diff(|q| composite_loss(&sizes, &theta, q, (ix, it), (ox, ot)), &r, 1e-5);
        let e1 = max_rel_err(&mg.theta, &fd_theta, 1e-6);
        let e2 = max_rel_err(mg.rate.as_slice(), &fd_rate, 1e-6);
        assert!(e1 < 1e-4 && e2 < 1e-4, "seed {seed}: theta {e1} rate {e2}");
    }
}

#[test]
fn zero_rate_collapses_to_plain_gradient() {
    let (arch, theta, xs, ts) = instance(44, &[3, 8, 8, 2], 10, 0.0);
    let (ix, ox) = xs.split_at(5);
    let (it, ot) = ts.split_at(5);
    let outer = batch_of(&arch, ox, ot);
    let plain = arch.mse_grad(&theta, &outer).unwrap();
    for rate in [InnerRate::Scalar(0.0), InnerRate::PerParam(ParamVector::zeros(theta.len()))] {
        let mg = grad_through_update(&arch, &theta, &batch_of(&arch, ix, it), &outer, &rate).unwrap();
        assert_eq!(mg.theta.as_slice(), plain.grad.as_slice());
        assert_eq!(mg.outer_loss, plain.loss);
    }
}

#[test]
fn stationary_point_gives_zero_meta_gradient() {
    let (arch, theta, xs, _) = instance(45, &[2, 8, 2], 6, 0.0);
    let ts: Vec<Vec<f64>> = xs.iter().map(|x| arch.forward(&theta, x).unwrap()).collect();
    let b = batch_of(&arch, &xs, &ts);
    let rate = InnerRate::PerParam(ParamVector::filled(theta.len(), 0.1));
    let mg = grad_through_update(&arch, &theta, &b, &b, &rate).unwrap();
    assert!(mg.theta.iter().all(|v| *v == 0.0));
    assert!(mg.rate.as_slice().iter().all(|v| *v == 0.0));
}

// ---- recurrent cell ----

fn gru_instance(seed: u64, arch: GruArch, steps: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = TestRng::new(seed);
    let p = rng.vec(arch.param_count(), -0.7, 0.7);
    let xs = (0..steps).map(|_| rng.vec(arch.in_dim, -1.0, 1.0)).collect();
    let ts = (0..steps).map(|_| rng.vec(arch.out_dim, -1.0, 1.0)).collect();
    (p, xs, ts)
}

#[test]
fn gru_unroll_matches_scalar_reference() {
    let arch = GruArch::new(3, 4, 2);
    let (p, xs, _) = gru_instance(9, arch, 2);
    let h0 = vec![0.1, -0.3, 0.2, 0.0];
    let (ys, h) = arch
        .forward(&p, &Matrix::from_rows(3, &xs).unwrap(), &h0)
        .unwrap();
    let (ry, rh) = reference_gru(3, 4, 2, &p, &xs, &h0);
    for (a, b) in ys.iter_rows().zip(&ry) {
        assert!(max_rel_err(a, b, 1e-12) < 1e-13);
    }
    assert!(max_rel_err(&h, &rh, 1e-12) < 1e-13);
}

fn reference_seq_loss(arch: GruArch, p: &[f64], seqs: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)]) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (xs, ts) in seqs {
        let (ys, _) = reference_gru(arch.in_dim, arch.hidden_dim, arch.out_dim, p, xs, &vec![0.0; arch.hidden_dim]);
        for (y, t) in ys.iter().zip(ts) {
            for (a, b) in y.iter().zip(t) {
                s += (a - b) * (a - b);
                n += 1;
            }
        }
    }
    s / n as f64
}

#[test]
fn bptt_matches_finite_differences() {
    let arch = GruArch::new(2, 3, 2);
    let (p, xs, ts) = gru_instance(13, arch, 3);
    let (_, xs2, ts2) = gru_instance(14, arch, 2);
    let seqs = vec![(xs, ts), (xs2, ts2)];
    let lib_seqs: Vec<Sequence> = seqs
        .iter()
        .map(|(x, t)| Sequence {
            inputs: Matrix::from_rows(2, x).unwrap(),
            targets: Matrix::from_rows(2, t).unwrap(),
        })
        .collect();
    let g = arch.sequence_mse_grad(&p, &lib_seqs).unwrap();
    let fd = central_diff(|q| reference_seq_loss(arch, q, &seqs), &p, 1e-5);
    let err = max_rel_err(&g.grad, &fd, 1e-6);
    assert!(err < 1e-5, "{err}");
    assert!((g.loss - reference_seq_loss(arch, &p, &seqs)).abs() < 1e-14);
}

#[test]
fn single_step_bptt_reduces_to_readout_regression() {
    // With one step from h0 = 0 the readout block sees a fixed feature h1,
    // so its gradient is the linear least-squares gradient on h1.
    let arch = GruArch::new(2, 3, 2);
    let (p, xs, ts) = gru_instance(17, arch, 1);
    let (_, h1) = reference_gru(2, 3, 2, &p, &xs, &[0.0; 3]);
    let seq = Sequence {
        inputs: Matrix::from_rows(2, &xs).unwrap(),
        targets: Matrix::from_rows(2, &ts).unwrap(),
    };
    let g = arch.sequence_mse_grad(&p, &[seq]).unwrap();
    let wo = p.len() - 3 * 2 - 2;
    let y: Vec<f64> = (0..2)
        .map(|o| p[wo + 6 + o] + (0..3).map(|j| h1[j] * p[wo + j * 2 + o]).sum::<f64>())
        .collect();
    let mut expected = Vec::new();
    for j in 0..3 {
        for o in 0..2 {
            expected.push(2.0 * h1[j] * (y[o] - ts[0][o]) / 2.0);
        }
    }
    for o in 0..2 {
        expected.push(2.0 * (y[o] - ts[0][o]) / 2.0);
    }
    assert!(max_rel_err(&g.grad[wo..], &expected, 1e-12) < 1e-12);
}

#[test]
fn zero_residual_sequence_gives_zero_gradient() {
    let arch = GruArch::new(2, 3, 2);
    let (p, xs, _) = gru_instance(19, arch, 4);
    let inputs = Matrix::from_rows(2, &xs).unwrap();
    let (ys, _) = arch.forward(&p, &inputs, &[0.0; 3]).unwrap();
    let g = arch
        .sequence_mse_grad(&p, &[Sequence { inputs, targets: ys }])
        .unwrap();
    assert!(g.grad.iter().all(|v| *v == 0.0));
}

#[test]
fn outputs_are_deterministic() {
    let (arch, p, xs, ts) = instance(55, &[3, 8, 2], 4, 0.0);
    let b = batch_of(&arch, &xs, &ts);
    let a = arch.mse_grad(&p, &b).unwrap();
    let c = arch.mse_grad(&p, &b).unwrap();
    assert_eq!(a, c);
}
