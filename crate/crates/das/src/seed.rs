//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from one global seed through named
//! sub-streams, so that independent pieces of work (sampling, init,
//! training, batch selection) never share or race an RNG.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derive the seed of a named sub-stream from a global seed.
///
/// `extra` distinguishes per-item streams (e.g. a spec hash or a trial
/// index); pass 0 when there is no per-item component.
pub fn stream_seed(global: u64, purpose: &str, extra: u64) -> u64 {
    let mut bytes = Vec::with_capacity(purpose.len() + 16);
    bytes.extend_from_slice(&global.to_le_bytes());
    bytes.extend_from_slice(purpose.as_bytes());
    bytes.extend_from_slice(&extra.to_le_bytes());
    fnv1a64(&bytes)
}

/// RNG for a named sub-stream.
pub fn stream_rng(global: u64, purpose: &str, extra: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(global, purpose, extra))
}
