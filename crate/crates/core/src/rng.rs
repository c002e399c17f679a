//! Deterministic RNG stream splitting.
//!
//! Every stochastic consumer in a run draws from its own stream, derived from
//! the root seed plus a `(stage, purpose, index)` tag. Adding a new consumer
//! with a fresh tag therefore never perturbs the draws of existing ones, and
//! a whole run is a pure function of its root seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a 64-bit stream seed from `(root, stage, purpose, index)`.
///
/// FNV-1a over the tag bytes; stable across platforms and releases.
pub fn stream_seed(root: u64, stage: u64, purpose: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&root.to_le_bytes());
    eat(&stage.to_le_bytes());
    eat(purpose.as_bytes());
    eat(&index.to_le_bytes());
    h
}

/// A ChaCha8 generator seeded from the derived stream seed.
pub fn stream_rng(root: u64, stage: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, stage, purpose, index))
}

/// Generator seeded directly from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
