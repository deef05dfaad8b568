//! Seedable RNG streams.
//!
//! Every source of randomness in this crate is a ChaCha8 stream addressed by
//! `(seed, stream)`. Parallel workers draw from disjoint streams, so results
//! do not depend on scheduling or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for `(seed, stream)`. Distinct pairs give distinct
/// key material, so streams never collide.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    let mut state = seed ^ stream.rotate_left(32);
    let a = splitmix64(&mut state);
    let b = splitmix64(&mut state);
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed for nested stream spaces (e.g. per-layer, per-forest).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut state = seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407);
    splitmix64(&mut state)
}
