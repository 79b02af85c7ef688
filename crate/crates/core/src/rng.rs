//! Seeded random streams.
//!
//! Every random draw in the simulator comes from a stream identified by a
//! root seed plus a short path of tags (system index, report index, sample
//! index, ...). Streams never share state, so results do not depend on the
//! order in which independent computations are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream domains, used as the first tag so unrelated consumers never collide.
pub mod domain {
    pub const FLEET: u64 = 0x0066_6c65_6574;
    pub const ZO: u64 = 0x7a6f;
    pub const DELAY: u64 = 0x0064_656c_6179;
    pub const H_GRAD: u64 = 0x6867;
    pub const PROBE: u64 = 0x0070_726f_6265;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from a root seed and a tag path.
pub fn derive_key(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_key(seed, tags))
}
