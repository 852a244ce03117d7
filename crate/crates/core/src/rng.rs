//! Seed plumbing. Every random draw in the crate comes from a ChaCha8 stream
//! keyed by a user seed and a purpose tag, so runs are reproducible and
//! independent components never share a stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) type Rng = ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ mix(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub(crate) fn stream(seed: u64, tag: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

pub(crate) fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

// Purpose tags.
pub(crate) const TAG_CRITIC_INIT: u64 = 1;
pub(crate) const TAG_BATCHES: u64 = 2;
pub(crate) const TAG_FINAL_SHUFFLE: u64 = 3;
pub(crate) const TAG_DATA: u64 = 4;
pub(crate) const TAG_ENCODER: u64 = 5;
pub(crate) const TAG_LAYER: u64 = 0x100;
