//! Central finite-difference gradient checks shared by the test targets.
#![allow(dead_code)]

use cfa_core::nn::{kl_divergence, softmax_cross_entropy, ArchSpec, DenseNet};
use cfa_core::schedules::trades_cfa_loss;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

pub fn numeric_param_grad(net: &DenseNet, loss: impl Fn(&DenseNet) -> f64) -> Vec<f64> {
    let theta = net.flatten();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(theta.len());
    let mut shifted = theta.clone();
    for i in 0..theta.len() {
        shifted[i] = theta[i] + FD_STEP;
        probe.assign_flat(&shifted).unwrap();
        let up = loss(&probe);
        shifted[i] = theta[i] - FD_STEP;
        probe.assign_flat(&shifted).unwrap();
        let down = loss(&probe);
        shifted[i] = theta[i];
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

pub fn numeric_input_grad(x: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[r, c]];
        probe[[r, c]] = orig + FD_STEP;
        let up = loss(&probe);
        probe[[r, c]] = orig - FD_STEP;
        let down = loss(&probe);
        probe[[r, c]] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

/// One random network and batch; every field is a `(name, relative error)` pair.
pub struct Case {
    pub errors: Vec<(&'static str, f64)>,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..7);
    let k = rng.random_range(2..5);
    let depth = rng.random_range(0..3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..8)).collect();
    let m = rng.random_range(1..6);
    let mut net = DenseNet::init(&ArchSpec::mlp(d, &hidden, k), seed).unwrap();
    // Nonzero biases keep every ReLU off its kink, even behind a dead layer.
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_simple_fn((m, d), || rng.random_range(-1.5..1.5));
    let x_adv = &x + &Array2::from_shape_simple_fn((m, d), || rng.random_range(-0.3..0.3));
    let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let beta: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..8.0)).collect();

    let ce = |n: &DenseNet, xs: &Array2<f64>| softmax_cross_entropy(&n.logits(xs.view()).unwrap(), &y).unwrap().0;
    let kl = |n: &DenseNet, a: &Array2<f64>, b: &Array2<f64>| {
        kl_divergence(&n.logits(a.view()).unwrap(), &n.logits(b.view()).unwrap()).unwrap().loss
    };
    let cfa = |n: &DenseNet, a: &Array2<f64>, b: &Array2<f64>| trades_cfa_loss(n, a.view(), b.view(), &y, &beta).unwrap().0;

    let mut errors = Vec::new();

    // Cross-entropy: parameters and input.
    let (logits, cache) = net.forward(x.view()).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &y).unwrap();
    let (grads, input_grad) = net.backward(&cache, &g).unwrap();
    errors.push(("ce/params", relative_error(&grads.flatten(), &numeric_param_grad(&net, |n| ce(n, &x)))));
    errors.push(("ce/input", relative_error(input_grad.as_slice().unwrap(), &numeric_input_grad(&x, |xs| ce(&net, xs)))));

    // KL(f(x) ‖ f(x')): parameters through both arguments, input through x'.
    let (lp, cp) = net.forward(x.view()).unwrap();
    let (lq, cq) = net.forward(x_adv.view()).unwrap();
    let out = kl_divergence(&lp, &lq).unwrap();
    let (mut kg, _) = net.backward(&cp, &out.grad_p).unwrap();
    let (kq, kl_input) = net.backward(&cq, &out.grad_q).unwrap();
    kg.add_assign(&kq);
    errors.push(("kl/params", relative_error(&kg.flatten(), &numeric_param_grad(&net, |n| kl(n, &x, &x_adv)))));
    errors.push((
        "kl/input",
        relative_error(kl_input.as_slice().unwrap(), &numeric_input_grad(&x_adv, |xs| kl(&net, &x, xs))),
    ));

    // Calibrated composite objective.
    let (_, cg) = trades_cfa_loss(&net, x.view(), x_adv.view(), &y, &beta).unwrap();
    errors.push(("cfa/params", relative_error(&cg.flatten(), &numeric_param_grad(&net, |n| cfa(n, &x, &x_adv)))));
    let weights: Vec<f64> = beta.iter().map(|b| b / (1.0 + b)).collect();
    let wkl = cfa_core::nn::weighted_kl_divergence(&lp, &lq, &weights).unwrap();
    let (_, cfa_input) = net.backward(&cq, &wkl.grad_q).unwrap();
    errors.push((
        "cfa/input",
        relative_error(cfa_input.as_slice().unwrap(), &numeric_input_grad(&x_adv, |xs| cfa(&net, &x, xs))),
    ));

    Case { errors }
}

/// Largest relative error over `n` random cases, with the offending case.
pub fn gradient_suite(n: u64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for seed in 0..n {
        for (name, err) in random_case(seed).errors {
            if err > worst.0 || !err.is_finite() {
                worst = (err, format!("seed {seed} {name}"));
            }
        }
    }
    worst
}
