//! Seeded randomness. Every consumer draws from a ChaCha8 stream derived from
//! a master seed plus a fixed per-purpose offset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

/// Offsets added to a master seed to derive independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    Init = 1,
    Noise = 2,
    Shuffle = 3,
    Validation = 4,
}

pub fn derive_seed(master: u64, purpose: SeedPurpose) -> u64 {
    master.wrapping_add(purpose as u64)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for `seed` positioned on stream `stream` (used for per-epoch draws).
pub fn seeded_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_tensor(shape: &[usize], std: f32, rng: &mut Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| (standard_normal(rng) as f32) * std)
        .collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}
