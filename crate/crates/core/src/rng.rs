//! Counter-based random streams.
//!
//! Every random draw in an experiment is taken from a stream identified by
//! `(seed, level, index)`, so results do not depend on batching or on the
//! order in which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub level: u32,
    pub index: u64,
}

impl StreamId {
    pub fn new(seed: u64, level: u32, index: u64) -> Self {
        Self { seed, level, index }
    }

    /// Stream for one purpose of an experiment seed, so that e.g. level-`l`
    /// single-level draws and level-`l` coupled draws never overlap.
    pub fn tagged(seed: u64, purpose: Purpose, level: u32, index: u64) -> Self {
        Self::new(mix(seed, purpose as u64), level, index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, self.level as u64));
        rng.set_stream(self.index);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Single = 1,
    Coupled = 2,
    Pilot = 3,
    Mlpf = 4,
    Highest = 5,
    Truth = 6,
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93))
}
