//! Seeded random streams.
//!
//! Every random quantity is drawn from a `ChaCha8Rng` seeded with a 64-bit
//! value. Per-sample streams are derived from a master seed and the sample
//! index alone, so sample `n` of a dataset (or its perturbation) never depends
//! on how many samples were generated before it or on which worker made it.
//!
//! The derivation is fixed for this crate version:
//!
//! ```text
//! substream_seed(master, index) = splitmix64(master ^ splitmix64(index + 0x9E3779B97F4A7C15))
//! ```
//!
//! and the stream itself is `ChaCha8Rng::seed_from_u64(substream_seed(..))`.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Domain tag mixed into the master seed for perturbation streams.
pub const PERTURBATION_DOMAIN: u64 = 0x5045_5254_5552_4221;

/// Domain tag mixed into the master seed for weight initialization.
pub const INIT_DOMAIN: u64 = 0x494E_4954_5745_4947;

/// The SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

pub fn substream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, index))
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Master seed for the perturbation streams belonging to `master`.
pub fn perturbation_master(master: u64) -> u64 {
    splitmix64(master ^ PERTURBATION_DOMAIN)
}
