//! Deterministic seed derivation.
//!
//! Every stochastic operation in the crate takes an explicit seed and derives
//! any sub-streams through [`stable_hash`], an FNV-1a mix that is fixed for
//! the life of the on-disk formats (manifests record derived seeds, so the
//! hash must never change between versions).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte stream, followed by a splitmix finalizer so that
/// low-entropy inputs (small counters) still produce well-mixed seeds.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        // separator keeps ("ab","c") distinct from ("a","bc")
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream of a parent seed.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    stable_hash(&[&parent.to_le_bytes(), tag.as_bytes(), &index.to_le_bytes()])
}

/// Seed for a per-record stream keyed by path.
pub fn derive_seed_for_path(parent: u64, path: &str, index: u64) -> u64 {
    stable_hash(&[&parent.to_le_bytes(), path.as_bytes(), &index.to_le_bytes()])
}

/// The crate-wide RNG. ChaCha gives identical streams on every platform.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
