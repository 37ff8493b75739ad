//! Seed derivation. Every consumer of randomness draws from its own ChaCha
//! stream keyed by (master seed, purpose, index), so serial and parallel
//! evaluation agree bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    Scene = 1,
    Render = 2,
    Labels = 3,
    Init = 4,
    Shuffle = 5,
    Split = 6,
    Table = 7,
}

pub(crate) fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
