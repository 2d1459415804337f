//! Deterministic derivation of child seeds from a base seed.
//!
//! Every source of randomness in the crate is a ChaCha stream seeded
//! through [`derive`], so a run is a pure function of its configured
//! seeds regardless of thread scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a stream index into a base seed.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ stream.wrapping_mul(GOLDEN))
}

/// Two-level variant for (epoch, phase)-style derivations.
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_streams_give_distinct_seeds() {
        let seeds: Vec<u64> = (0..100).map(|i| derive(42, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive(7, 3), derive(7, 3));
        assert_ne!(derive(7, 3), derive(8, 3));
    }
}
