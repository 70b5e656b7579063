//! Deterministic seed splitting. Every random stage draws from a ChaCha stream whose
//! seed is derived from the single root seed, a stage label and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed for `(root, stage, index)`.
pub fn derive(root: u64, stage: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(stage)).wrapping_add(splitmix64(index)))
}

pub fn rng(root: u64, stage: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stage, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_and_indices_separate() {
        assert_eq!(derive(0, "scene", 3), derive(0, "scene", 3));
        assert_ne!(derive(0, "scene", 3), derive(0, "scene", 4));
        assert_ne!(derive(0, "scene", 3), derive(0, "world", 3));
        assert_ne!(derive(0, "scene", 3), derive(1, "scene", 3));
    }
}
