use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::{Matrix, Vector};

/// The single generator type used across the crate.
pub type LabRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (splitmix64 finalizer), so
/// sub-experiments get independent but reproducible generators.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal_vector(n: usize, rng: &mut LabRng) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut LabRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
