use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tasktree_bench::{ego_subgraph_embeddings, encoder, sbm_fixture};
use tasktree_core::encoder::{forward, project, Mode};
use tasktree_core::task::augment_with_task_nodes;

fn bench_tree_vs_ego(c: &mut Criterion) {
    let (g, tasks) = sbm_fixture(5000, 512, 0);
    let p = encoder(32, 2);
    let mut group = c.benchmark_group("tree_vs_ego");
    group.sample_size(20);
    group.bench_function("tasktree", |b| {
        b.iter(|| {
            let aug = augment_with_task_nodes(black_box(&g), &tasks).unwrap();
            let z = forward(&p, &g, Mode::Eval).unwrap();
            project(&p, &aug.virtual_mean(&z)).unwrap()
        })
    });
    group.bench_function("ego_subgraph", |b| {
        b.iter(|| ego_subgraph_embeddings(&p, black_box(&g), &tasks, 2).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_tree_vs_ego);
criterion_main!(benches);
