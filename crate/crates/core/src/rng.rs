//! Seeded RNG substreams.
//!
//! Every random decision in a run is drawn from a stream keyed by
//! `(seed, purpose, epoch, item)`, so the outcome does not depend on the
//! order in which workers pick up items.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a list of keys into a single 64-bit seed.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x5EED_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, keys...)`.
pub fn substream(seed: u64, keys: &[u64]) -> Rng {
    let mut all = Vec::with_capacity(keys.len() + 1);
    all.push(seed);
    all.extend_from_slice(keys);
    rng_from(derive_seed(&all))
}

/// Stream purposes used as the first key of [`substream`].
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const EPOCH_INDEX: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const MIXUP: u64 = 4;
    pub const TRUNCATE: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const CLASS_ORDER: u64 = 7;
}
