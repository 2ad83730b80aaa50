//! Named, independent random streams derived from one root seed.
//!
//! Every consumer draws from its own ChaCha stream keyed by the root seed,
//! so adding or removing draws in one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Setup = 1,
    Data = 2,
    Connectivity = 3,
    Bandit = 4,
    Learner = 5,
    Baseline = 6,
    Probe = 7,
}

/// Generator for `stream`, further split by round and server so that
/// per-server work can run in any order.
pub fn stream(seed: u64, stream: Stream, round: usize, server: usize) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((stream as u64) << 56) | ((round as u64 & 0xff_ffff_ffff) << 16) | (server as u64 & 0xffff);
    rng.set_stream(id);
    rng
}
