use cfa_core::analytic::{class_accuracy, ToyClass, ToyModelParams};
use cfa_core::attacks::{pgd_ce, AttackConfig};
use cfa_core::nn::{softmax_cross_entropy, ArchSpec, DenseNet};
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn fixture() -> (DenseNet, Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = DenseNet::init(&ArchSpec::mlp(20, &[64, 64], 4), 7).unwrap();
    let x = Array2::from_shape_fn((128, 20), |_| rng.random_range(-1.0..1.0));
    let y = (0..128).map(|i| i % 4).collect();
    (net, x, y)
}

fn forward_backward(c: &mut Criterion) {
    let (net, x, y) = fixture();
    c.bench_function("forward_backward_128x20", |b| {
        b.iter(|| {
            let (logits, cache) = net.forward(x.view()).unwrap();
            let (_, g) = softmax_cross_entropy(&logits, &y).unwrap();
            black_box(net.backward(&cache, &g).unwrap())
        })
    });
}

fn pgd(c: &mut Criterion) {
    let (net, x, y) = fixture();
    let cfg = AttackConfig::pgd10(0.1);
    let eps = vec![0.1; x.nrows()];
    c.bench_function("pgd10_ce_128x20", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            black_box(pgd_ce(&net, x.view(), &y, &eps, &cfg, &mut rng).unwrap())
        })
    });
}

fn toy(c: &mut Criterion) {
    let p = ToyModelParams::reference();
    c.bench_function("toy_class_accuracy", |b| {
        b.iter(|| black_box(class_accuracy(&p, ToyClass::Minus, black_box(1.0), 0.4).unwrap()))
    });
}

criterion_group!(benches, forward_backward, pgd, toy);
criterion_main!(benches);
