//! Seeded random streams. Every consumer of randomness gets its own ChaCha
//! stream keyed by (scenario seed, purpose, node), so adding draws in one place
//! never shifts the draws seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Mobility = 2,
    Traffic = 3,
    Mac = 4,
    Population = 5,
}

pub fn stream(seed: u64, purpose: Stream, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | node as u64);
    rng
}
