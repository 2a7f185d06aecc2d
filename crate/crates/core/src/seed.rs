//! Seed derivation. Every random stream in a run is keyed off the run seed
//! plus a purpose tag, so that streams never alias and resuming mid-run can
//! rebuild any stream without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_CAE_INIT: u64 = 0x01;
pub(crate) const STREAM_DISC_INIT: u64 = 0x02;
pub(crate) const STREAM_SHUFFLE: u64 = 0x03;
pub(crate) const STREAM_FOLD: u64 = 0x04;
pub(crate) const STREAM_FOLD_PLAN: u64 = 0x05;
pub(crate) const STREAM_SYNTH: u64 = 0x06;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub(crate) fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
