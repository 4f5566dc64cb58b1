//! Deterministic sub-streams for parallel Monte Carlo.
//!
//! Every independent unit of work (replicate, subject, chain) gets its own
//! ChaCha stream keyed by the master seed and a tuple of indices, so results
//! never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a key path into a single 64-bit stream id.
pub fn stream_id(key: &[u64]) -> u64 {
    key.iter()
        .fold(0x5de1_ab00_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A master seed from which keyed, independent streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, key: &[u64]) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream_id(key));
        rng
    }
}
