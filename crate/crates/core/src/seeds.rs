//! Deterministic seed derivation. Every random draw in the crate is seeded
//! from a master seed through [`derive`], so results do not depend on the order
//! in which independent tasks run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` under `master`. Results fit in 63 bits so
/// they survive round trips through TOML integers.
pub fn derive(master: u64, stream: u64) -> u64 {
    mix(mix(master) ^ mix(stream.wrapping_add(0x5851_F42D_4C95_7F2D))) >> 1
}

/// Child seed along a path of stream labels.
pub fn derive_path(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &p| derive(s, p))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams used by the experiment layer.
pub mod stream {
    pub const FORCING: u64 = 1;
    pub const RESERVOIR: u64 = 2;
    pub const INITIAL: u64 = 3;
    pub const DISTURBANCE: u64 = 4;
    pub const HOLDOUT: u64 = 5;
    pub const SYSTEM: u64 = 6;
    pub const NODE_BASE: u64 = 1 << 32;
}
