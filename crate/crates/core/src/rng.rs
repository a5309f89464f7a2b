//! Seed derivation. Every random stream comes from one user seed plus a
//! stream tag, so parallel work and separate pipeline stages never share or
//! depend on the order of draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for pipeline stages.
pub mod stream {
    pub const POOL: u64 = 1;
    pub const SELECT: u64 = 2;
    pub const LISSA: u64 = 3;
    pub const TRACE: u64 = 4;
    pub const TASK: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
