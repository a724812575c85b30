//! Deterministic randomness: every random decision in the crate flows from a
//! 64-bit master seed through a fixed derivation rule, so results are
//! independent of thread scheduling and identical across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep independently-derived streams from colliding.
pub mod domain {
    pub const SPLITS: u64 = 0x01;
    pub const FIT: u64 = 0x02;
    pub const TUNE: u64 = 0x03;
    pub const TREE: u64 = 0x04;
    pub const BOOTSTRAP: u64 = 0x05;
    pub const BOOTSTRAP_SPLITS: u64 = 0x06;
    pub const DGP: u64 = 0x07;
    pub const REP: u64 = 0x08;
    pub const EVAL: u64 = 0x09;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and an arbitrary tag sequence.
///
/// The rule is a fixed splitmix64 fold; the same (master, tags) always yields
/// the same child seed, and distinct tag sequences yield independent streams.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x5d3c_ab21_9e44_71f7);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// Seeded ChaCha8 stream; the concrete algorithm is pinned so schemes stay
/// reproducible across dependency upgrades.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a, used to hash learner specifications so that identical
/// specs receive identical fit seeds regardless of library position.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        let a = derive_seed(42, &[domain::FIT, 1, 2]);
        let b = derive_seed(42, &[domain::FIT, 1, 2]);
        let c = derive_seed(42, &[domain::FIT, 2, 1]);
        let d = derive_seed(43, &[domain::FIT, 1, 2]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn fnv_distinguishes_inputs() {
        assert_ne!(fnv1a(b"l1_logistic"), fnv1a(b"l1_linear"));
    }
}
