//! Seeded random streams.
//!
//! Every stochastic subsystem draws from its own ChaCha stream derived from
//! one master seed, so adding draws in one subsystem never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Env = 2,
    Policy = 3,
    Replay = 4,
    Eval = 5,
    Probe = 6,
    Assignment = 7,
    Warmup = 8,
    Diagnostics = 9,
}

pub fn stream(master: u64, which: Stream) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}
