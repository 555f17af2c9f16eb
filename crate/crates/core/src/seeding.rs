//! Deterministic RNG stream derivation.
//!
//! Every randomized component draws from its own ChaCha stream, seeded by a
//! stable hash of (master seed, component label, index). Adding a component
//! with a new label never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable 64-bit FNV-1a hash of (master, label, index).
///
/// The master seed and index are fed as little-endian bytes, the label as
/// UTF-8 bytes, in that order.
pub fn stream_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in master.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    for b in label.as_bytes() {
        h = (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME);
    }
    for b in index.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    h
}

/// ChaCha stream for one component, derived from the master seed.
pub fn stream_rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, label, index))
}
