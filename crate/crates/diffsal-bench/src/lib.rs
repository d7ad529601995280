//! Shared fixtures for the criterion benchmarks.

use diffsal_core::{CounterRng, Tensor};

/// Standard-normal tensor with a deterministic seed.
pub fn rand_normal(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut rng = CounterRng::keyed(seed, 0, "bench-normal");
    Tensor::new(shape.to_vec(), rng.normal_vec(n)).expect("fixture shape")
}

/// Uniform [0, 1) tensor with a deterministic seed.
pub fn rand_unit(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut rng = CounterRng::keyed(seed, 0, "bench-unit");
    let data = (0..n).map(|_| rng.uniform()).collect();
    Tensor::new(shape.to_vec(), data).expect("fixture shape")
}
