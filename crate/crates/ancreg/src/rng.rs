//! Deterministic seed derivation for independent substreams.
//!
//! Every simulated quantity draws from a ChaCha stream keyed by the user
//! seed plus a tag path (run index, node index, ...). Parallel schedules
//! therefore cannot change any result: a substream depends only on its tags.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, the standard 64-bit finalizer mix.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag path into a single derived 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        out ^= splitmix64(&mut state);
    }
    out
}

/// ChaCha generator for the substream identified by `(seed, tags)`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(seed, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn substreams_are_reproducible() {
        let mut a = substream(7, &[1, 2]);
        let mut b = substream(7, &[1, 2]);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_tags_give_distinct_streams() {
        let mut a = substream(7, &[1, 2]);
        let mut b = substream(7, &[2, 1]);
        let mut c = substream(7, &[1]);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(y, z);
    }

    #[test]
    fn derive_seed_depends_on_every_tag() {
        assert_ne!(derive_seed(1, &[0, 5]), derive_seed(1, &[0, 6]));
        assert_ne!(derive_seed(1, &[5]), derive_seed(2, &[5]));
    }
}
