//! Reproducible random streams.
//!
//! Every replica owns a ChaCha8 stream keyed by `base_seed + replica_index`,
//! so replica results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type KmpRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> KmpRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn replica_seed(base_seed: u64, replica: u64) -> u64 {
    base_seed.wrapping_add(replica)
}

pub fn replica_rng(base_seed: u64, replica: u64) -> KmpRng {
    seeded(replica_seed(base_seed, replica))
}
