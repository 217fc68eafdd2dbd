//! Seed derivation. Every random stream in the crate is a pure function of a
//! master seed and a small tuple of indices, so results do not depend on the
//! order in which rayon schedules work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating the independent uses of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Simulation = 1,
    Bootstrap = 2,
    MinVolatility = 3,
    Replication = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream tag and an index.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

/// Generator for replicate `index` of `stream`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
