//! Seeded random streams.
//!
//! Every source of randomness in an experiment is a named substream derived
//! from one root seed, so changing e.g. the number of clients never perturbs
//! the dataset, and two runs with the same root seed are bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Derives a child seed from a root seed and a stream label.
///
/// FNV-1a over the label, mixed with the root via splitmix64. Stable across
/// platforms and releases (unlike `DefaultHasher`).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ h)
}

/// A seeded ChaCha stream for the given root seed and label.
pub fn substream(root: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(root, label))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
