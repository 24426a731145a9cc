use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use condwalk_core::kernel::{big_l, ell, int_ell, p_kernel, psi};

fn pointwise(c: &mut Criterion) {
    let pts: Vec<(f64, f64)> = (0..256).map(|i| (0.03 * i as f64, 4.0 - 0.015 * i as f64)).collect();
    c.bench_function("psi/256", |b| b.iter(|| pts.iter().map(|&(x, y)| psi(black_box(x), y)).sum::<f64>()));
    c.bench_function("p/256", |b| b.iter(|| pts.iter().map(|&(x, y)| p_kernel(black_box(x), y)).sum::<f64>()));
    c.bench_function("ell/256", |b| b.iter(|| pts.iter().map(|&(x, y)| ell(black_box(x), y)).sum::<f64>()));
    c.bench_function("L/256", |b| b.iter(|| pts.iter().map(|&(x, _)| big_l(black_box(x))).sum::<f64>()));
    c.bench_function("int_ell/64", |b| {
        b.iter(|| pts.iter().step_by(4).map(|&(x, u)| int_ell(black_box(x), u).unwrap()).sum::<f64>())
    });
}

criterion_group!(benches, pointwise);
criterion_main!(benches);
