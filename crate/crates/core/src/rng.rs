//! Seeded random-number streams.
//!
//! One master seed fans out into independent named streams (init, dropout,
//! batching, schedules, ...) so that adding draws to one purpose never
//! perturbs another. ChaCha is counter-based, which keeps every stream
//! reproducible across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream type handed to everything that needs randomness.
pub type Stream = ChaCha8Rng;

/// Fans a master seed out into named, mutually independent streams.
#[derive(Clone, Copy, Debug)]
pub struct RngPool {
    seed: u64,
}

impl RngPool {
    pub fn new(seed: u64) -> Self {
        RngPool { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for the given purpose. The same `(seed, purpose)`
    /// pair always yields an identical sequence.
    pub fn stream(&self, purpose: &str) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a64(purpose.as_bytes()));
        rng
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
