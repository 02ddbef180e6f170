//! Fixtures shared by the benchmarks.

use kpbench_core::dataset::{synthesize_dataset, to_batch};
use kpbench_core::Tensor;

/// A normalized input batch of `n` synthetic faces.
pub fn face_batch(n: usize, seed: u64) -> Tensor<f32> {
    let ds = synthesize_dataset(n, seed);
    to_batch(&ds.samples).expect("synthetic faces form a batch").images
}
