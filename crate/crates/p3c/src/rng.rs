//! Deterministic seed derivation.
//!
//! Parallel units (workers, clusters, queries, macro-replications) never share
//! an RNG. Each unit derives its own stream seed from a root seed and a salt
//! via `splitmix64`, so results are identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used for all simulation draws.
pub type SimRng = ChaCha8Rng;

/// 64-bit finalizer from splitmix64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a salt: `mix64(root XOR mix64(salt))`.
///
/// This is the documented splitting rule for all parallel callers.
#[inline]
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    mix64(root ^ mix64(salt))
}

/// Two-level derivation for nested units (e.g. cluster index then query index).
#[inline]
pub fn derive_seed2(root: u64, salt_a: u64, salt_b: u64) -> u64 {
    derive_seed(derive_seed(root, salt_a), salt_b)
}

/// Fresh RNG for a derived stream.
#[inline]
pub fn stream(root: u64, salt: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, salt))
}
