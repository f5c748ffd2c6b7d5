//! Child-seed derivation.
//!
//! Every random stream in a run is keyed by `(component, index)` under one
//! root seed, so adding a drone never shifts the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` for the named component and index.
pub fn derive_seed(root: u64, component: &str, index: u64) -> u64 {
    let h = splitmix64(root ^ fnv1a(component.as_bytes()));
    splitmix64(h ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Seeded generator used everywhere in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
