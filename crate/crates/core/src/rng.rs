//! Seeded random number generation.
//!
//! Every random draw in the crate goes through ChaCha8 (`rand_chacha`), keyed by
//! a 64-bit seed and a 64-bit stream id. ChaCha is a portable, counter-based
//! generator, so a `(seed, stream)` pair reproduces the same sequence on every
//! platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// Generator for `seed` on the given stream.
pub fn seeded_rng(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids used to keep independent consumers of one seed apart.
pub mod streams {
    pub const SYNTH: u64 = 1;
    pub const SIMULATE: u64 = 2;
    pub const KMEANS: u64 = 3;
    pub const ROLLS: u64 = 4;
}
