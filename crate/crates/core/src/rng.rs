//! Seeded random streams.
//!
//! Every stochastic operation draws from ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and switched to a fixed stream id, so
//! the environment, the symbol path and the subsampling decisions of one
//! seed never share random numbers. Independent replicas (for example the
//! 100 paths of a pointwise-dimension study) use [`split_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Environment = 0,
    Path = 1,
    Subsample = 2,
    MultiStart = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer applied to `seed + (index + 1) * golden`.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
