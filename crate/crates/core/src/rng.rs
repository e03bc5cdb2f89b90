//! Seeded random streams.
//!
//! Every stochastic unit of work (a session, a trajectory, a sample shard)
//! owns a stream derived from `(seed, domain, index)`, so results do not
//! depend on how work is split across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream domains keep independent uses of one seed from colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Session = 1,
    Price = 2,
    Sampler = 3,
    Trajectory = 4,
    Training = 5,
    Drift = 6,
    Evaluation = 7,
    Init = 8,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a child seed; used to give sub-experiments their own seed space.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    mix(mix(seed ^ mix(domain as u64)) ^ index)
}

/// A fresh stream for unit `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(domain as u64)));
    rng.set_stream(index);
    rng
}
