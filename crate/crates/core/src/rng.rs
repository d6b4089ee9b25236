//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` derived from a master seed.
pub fn child_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform number in `[0, 1)` determined by `(seed, key)`.
pub fn unit_hash(seed: u64, key: u64) -> f64 {
    let h = crate::complexity::splitmix(seed ^ crate::complexity::splitmix(key));
    (h >> 11) as f64 / (1u64 << 53) as f64
}
