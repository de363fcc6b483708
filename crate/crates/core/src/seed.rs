//! Keyed derivation of independent, reproducible RNG streams.
//!
//! Every random draw in the crate comes from a stream keyed by the user seed
//! plus a tuple of stable integers (station index, proportion, replicate, ...),
//! so adding work never perturbs streams that already exist and parallel
//! workers never share a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with an ordered list of keys into a 64-bit stream seed.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// Stable 64-bit key for a textual tag (FNV-1a).
pub fn tag(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(base: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, keys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tag_is_stable() {
        assert_eq!(tag(""), 0xcbf2_9ce4_8422_2325);
        assert_ne!(tag("plan"), tag("scan"));
    }
}
