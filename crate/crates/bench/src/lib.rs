//! Shared inputs for the criterion benches.

use phtrans_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Standard-normal tensor, reproducible from `seed`.
pub fn input(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}
