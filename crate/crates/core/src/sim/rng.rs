//! Counter-based random streams.
//!
//! Every random quantity of a run is drawn from its own stream, keyed by
//! the run seed, what it is for, and the round. Decisions of the mechanism
//! never feed back into the draws, so variants sharing a seed see the same
//! queries and the same noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Tag {
    Theta = 1,
    Features = 2,
    Noise = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, tag: Tag, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag as u64)));
    rng.set_stream(index);
    rng
}

/// Seed of repeat `rep` of a run seeded with `seed`. Repeat 0 keeps the
/// base seed.
pub fn derived_seed(seed: u64, rep: u32) -> u64 {
    if rep == 0 {
        seed
    } else {
        splitmix64(seed.wrapping_add(splitmix64(rep as u64)))
    }
}
