//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha8 stream derived from the
//! experiment seed: stream 0 feeds measurement noise and stream `1 + k`
//! feeds the planner for leg `k`. Replays are therefore independent of how
//! many samples any other consumer drew.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const NOISE_STREAM: u64 = 0;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn leg_stream(seed: u64, leg: usize) -> Rng {
    stream(seed, 1 + leg as u64)
}
