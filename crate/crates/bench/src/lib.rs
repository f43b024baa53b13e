//! Fixtures shared by the benchmarks in `benches/`.

use detdiv_core::data::{Batch, Dataset};
use detdiv_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// `n` random 32×32 images with labels cycling through `classes`.
pub fn random_batch(n: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n * 1024).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    let data = Dataset::new(classes, 32, 32, labels, images).expect("consistent sizes");
    data.gather(&(0..n).collect::<Vec<_>>())
}
