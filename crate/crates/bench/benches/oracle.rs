use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use condwalk_core::increments::builtin;
use condwalk_core::lattice_oracle::{exit_pmf, joint_law, llt_sup_error, Constraint};
use condwalk_core::montecarlo::mc_persistence;

fn dp(c: &mut Criterion) {
    let ssrw = builtin("ssrw").unwrap();
    let trinomial = builtin("trinomial").unwrap();
    let mut g = c.benchmark_group("joint_law");
    for n in [256u64, 1024, 4096] {
        g.bench_with_input(BenchmarkId::new("ssrw", n), &n, |b, &n| {
            b.iter(|| joint_law(&ssrw, black_box(0.0), n, Constraint::SurviveThroughPrev).unwrap())
        });
    }
    g.finish();
    c.bench_function("exit_pmf/trinomial/2048", |b| b.iter(|| exit_pmf(&trinomial, black_box(1.0), 2048).unwrap()));
    c.bench_function("llt_sup_error/trinomial/1024", |b| b.iter(|| llt_sup_error(&trinomial, black_box(1024)).unwrap()));
}

fn monte_carlo(c: &mut Criterion) {
    let uniform = builtin("uniform").unwrap();
    let mut g = c.benchmark_group("mc");
    g.sample_size(10);
    g.bench_function("persistence/uniform/n256/1e4", |b| {
        b.iter(|| mc_persistence(&uniform, black_box(0.0), 256, 10_000, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, dp, monte_carlo);
criterion_main!(benches);
