//! Deterministic child seeds, so every random stage of a run can be
//! reproduced from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a label into a parent seed (FNV-1a over the label, then a
/// SplitMix64 finalizer).
pub fn child_seed(parent: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(parent ^ splitmix(h))
}

/// Child seed for an indexed item under a label.
pub fn indexed_seed(parent: u64, label: &str, index: u64) -> u64 {
    splitmix(child_seed(parent, label).wrapping_add(splitmix(index)))
}

pub fn rng_for(parent: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(parent, label))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_indices_separate_streams() {
        assert_eq!(child_seed(7, "a"), child_seed(7, "a"));
        assert_ne!(child_seed(7, "a"), child_seed(7, "b"));
        assert_ne!(child_seed(7, "a"), child_seed(8, "a"));
        assert_ne!(indexed_seed(7, "a", 0), indexed_seed(7, "a", 1));
    }
}
