use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kpbench_bench::face_batch;
use kpbench_core::Architecture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward(c: &mut Criterion) {
    let x = face_batch(8, 1);
    let mut group = c.benchmark_group("forward_batch8");
    group.sample_size(10);
    for arch in Architecture::ALL {
        let model = arch.build(0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(arch.label()), &x, |b, x| {
            b.iter(|| black_box(model.forward(x).unwrap()))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let x = face_batch(8, 2);
    let mut model = Architecture::Manual.build(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("manual_forward_backward_batch8", |b| {
        b.iter(|| {
            let (y, tape) = model.forward_train(&x, &mut rng).unwrap();
            black_box(model.backward(&tape, &y).unwrap())
        })
    });
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
