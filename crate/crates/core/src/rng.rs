//! Seed-derived random streams. Every source of randomness in a run draws
//! from its own ChaCha stream keyed by the run seed, so changing how one
//! consumer uses randomness never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Bootstrap = 3,
    Split = 4,
    Dropout = 5,
    Data = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
