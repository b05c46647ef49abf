//! Seed derivation.
//!
//! Every random stream in a run is derived from one root seed. A child seed
//! is `splitmix64(splitmix64(parent ^ tag) ^ index)`, so streams are keyed
//! by (purpose, index) and adding a client never shifts the seeds of the
//! clients before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation randomness.
pub type SimRng = ChaCha8Rng;

/// Stream tags.
pub mod stream {
    pub const PARTITION: u64 = 0x7061_7274; // "part"
    pub const CLIENT: u64 = 0x636c_6e74; // "clnt"
    pub const EXPERIMENT: u64 = 0x6578_7072; // "expr"
}

/// One round of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ tag) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
