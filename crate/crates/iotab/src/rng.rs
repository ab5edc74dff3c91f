//! Deterministic random-number plumbing.
//!
//! Every stochastic stage derives its generator from an explicit `u64` seed.
//! Substreams use the ChaCha stream field so that, for example, augmentation
//! sample `i` sees the same draws no matter how samples are batched, and each
//! trained item gets an independent generator derived from its address
//! string. String hashing is done with FNV-1a rather than the standard
//! library hasher, whose output is not stable across releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for a named substream of a root seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit hash of a label mixed with a root seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in seed.to_le_bytes().into_iter().chain(label.bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}
