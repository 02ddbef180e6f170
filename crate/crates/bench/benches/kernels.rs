use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kpbench_bench::face_batch;
use kpbench_core::dataset::{synthesize_dataset_with, SynthOptions};
use kpbench_core::imputation::{impute, ImputeMethod};
use kpbench_core::tensor::{conv2d, depthwise_conv2d, Padding};
use kpbench_core::Tensor;

fn convolutions(c: &mut Criterion) {
    let x = face_batch(8, 3);
    let mut group = c.benchmark_group("conv3x3_96px_batch8");
    group.sample_size(20);
    for filters in [8usize, 32] {
        let w = Tensor::from_fn(&[filters, 1, 3, 3], |i| (i as f32 * 0.37).sin()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(filters), &w, |b, w| {
            b.iter(|| black_box(conv2d(&x, w, None, 1, Padding::Same).unwrap()))
        });
    }
    group.finish();

    let wide = Tensor::from_fn(&[8, 32, 48, 48], |i| (i as f32 * 0.11).cos()).unwrap();
    let dw = Tensor::from_fn(&[32, 1, 3, 3], |i| (i as f32 * 0.29).sin()).unwrap();
    c.bench_function("depthwise3x3_32ch_48px_batch8", |b| {
        b.iter(|| black_box(depthwise_conv2d(&wide, &dw, None, 1, Padding::Same).unwrap()))
    });
}

fn imputation(c: &mut Criterion) {
    let ds = synthesize_dataset_with(500, 4, &SynthOptions { missing_fraction: 0.7 });
    let mut group = c.benchmark_group("impute_500_rows");
    group.sample_size(10);
    for method in [ImputeMethod::ForwardFill, ImputeMethod::Knn] {
        group.bench_with_input(BenchmarkId::from_parameter(method.label()), &ds, |b, ds| {
            b.iter(|| black_box(impute(ds, method, 5).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, convolutions, imputation);
criterion_main!(benches);
