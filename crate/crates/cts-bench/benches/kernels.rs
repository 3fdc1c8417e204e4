use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cts_bench::{pair_sum_tensor, sum_tree_fixture};
use cts_core::inference::{forward, InferenceConfig};
use cts_core::sketch::{tt_svd, Rank, SketchConfig};

fn bench_tt_svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("tt_svd_pair_sum");
    for side in [19usize, 145, 577, 2305] {
        let phi = pair_sum_tensor(side);
        group.bench_with_input(BenchmarkId::from_parameter(side), &phi, |b, phi| {
            b.iter(|| tt_svd(phi, &SketchConfig::fixed(2, 0)).expect("sketch"))
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_sum_tree");
    for n in [4usize, 16, 64] {
        let (graph, sketches, leaves) = sum_tree_fixture(n, Rank::Fixed(2));
        let cfg = InferenceConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| forward(&graph, &sketches, &leaves, &cfg).expect("forward"))
        });
    }
    group.finish();
}

fn bench_reconstruct(c: &mut Criterion) {
    use cts_core::budget::ElementBudget;
    let mut group = c.benchmark_group("reconstruct_pair_sum");
    for side in [145usize, 1153] {
        let phi = pair_sum_tensor(side);
        let sketch = tt_svd(&phi, &SketchConfig::fixed(2, 0)).expect("sketch");
        group.bench_with_input(BenchmarkId::from_parameter(side), &sketch, |b, s| {
            b.iter(|| s.reconstruct(ElementBudget::DEFAULT).expect("within budget"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_tt_svd, bench_forward, bench_reconstruct);
criterion_main!(benches);
