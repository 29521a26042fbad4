//! Seeding. Every random stream is a ChaCha8 generator whose 64-bit seed is
//! derived from the user seed and a purpose tag, so streams never overlap and
//! adding a new consumer does not shift existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier written into dataset headers.
pub const PRNG_NAME: &str = "ChaCha8Rng(seed_from_u64)+rand_distr::StandardNormal";

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in purpose.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

pub fn rng(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, index))
}
