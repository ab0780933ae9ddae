//! Deterministic seed derivation.
//!
//! Per-image work runs in parallel, so every stage derives its generator
//! from `(global seed, item label, stream)` instead of pulling from one
//! shared sequence. Same inputs, same stream, regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over the label bytes. Not a general-purpose hash;
/// pinned here so derived seeds never change across toolchains.
pub fn label_hash(label: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in label.as_bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive an independent generator for one `(seed, label, stream)` triple.
pub fn derive_rng(seed: u64, label: &str, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&label_hash(label).to_le_bytes());
    key[16..24].copy_from_slice(&stream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
