//! Named random streams derived from one master seed.
//!
//! Every consumer of randomness in a training run owns its own stream, so
//! adding a draw in one place never shifts the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Env = 1,
    Init = 2,
    Masks = 3,
    ActionNoise = 4,
    HeadSelection = 5,
    Replay = 6,
    Eval = 7,
    Warmup = 8,
    Diagnostics = 9,
    EvalEnv = 10,
}

/// Deterministic generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Plain seeded generator, for tests and one-off sampling.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
