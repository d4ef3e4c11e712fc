//! Stable per-image seed derivation.
//!
//! Seeds must not depend on ingestion order or thread scheduling, so they are
//! derived from the global seed and the image identifier only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the identifier bytes.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, image_id: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(image_id.as_bytes())))
}

pub fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, image_id))
}
