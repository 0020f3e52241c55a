use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use tasktree_core::eval::auc;
use tasktree_core::rng::SeedStream;

fn bench_auc(c: &mut Criterion) {
    let mut group = c.benchmark_group("auc");
    for n in [1_000, 100_000] {
        let mut rng = SeedStream::new(1).rng();
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 100.0).round()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &(scores, labels), |b, (s, l)| {
            b.iter(|| auc(black_box(s), black_box(l)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_auc);
criterion_main!(benches);
