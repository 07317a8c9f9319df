//! Named random sub-streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for the tag path `tags` under `seed`.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ splitmix(t));
    }
    h
}

/// Deterministic stream for `(seed, tags...)`. Distinct tag paths give
/// independent streams, so any prefix of a run can be regenerated.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, tags))
}

/// Tags for the sub-streams used by the simulator.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const CLIENT: u64 = 3;
    pub const TEST: u64 = 4;
    pub const PARTITION: u64 = 5;
    pub const SYNTH_INIT: u64 = 6;
}
