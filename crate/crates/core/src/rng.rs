//! Named random substreams derived from one root seed.
//!
//! Every consumer (`"scene"`, `"weights"`, `"radar"`, ...) gets its own ChaCha
//! stream so one component can be perturbed without shifting the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a 64-bit seed for `name` (and optional index) from `root`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    // splitmix64 finalizer over the mixed inputs
    let mut z = root ^ fnv1a(name.as_bytes()).rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name, index))
}
