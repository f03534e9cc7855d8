//! Deterministic randomness.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(seed, stream)`. Loops that could run in parallel take one stream per
//! index, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used by the trainer so that unrelated consumers of the same
/// seed never share a stream.
pub mod tags {
    pub const POLICY_INIT: u64 = 1;
    pub const ENV_BUILD: u64 = 2;
    pub const REWARD_MODEL: u64 = 3;
    pub const GROUP: u64 = 1 << 32;
    pub const STATIONARITY: u64 = 2 << 32;
    pub const CURATION: u64 = 3 << 32;
    pub const CORPUS: u64 = 4 << 32;
}

/// Counter-based generator positioned on `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// 64-bit FNV-1a. Stable across platforms and toolchain versions, unlike
/// `std::collections::hash_map::DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Maps a string to a fraction in `[0, 1)`.
pub fn hash_fraction(s: &str) -> f64 {
    // top 53 bits give an exactly representable fraction
    (fnv1a(s.as_bytes()) >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(9, 3), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(9, 3), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(stream(9, 4), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn hash_fraction_in_unit_interval() {
        for s in ["", "aspirin", "fever", "x".repeat(100).as_str()] {
            let f = hash_fraction(s);
            assert!((0.0..1.0).contains(&f));
        }
    }
}
