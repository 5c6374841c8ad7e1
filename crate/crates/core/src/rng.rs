//! Counter-based random streams.
//!
//! Every random draw in a simulation comes from a ChaCha stream keyed by
//! `(master_seed, purpose, round, agent, arm)`. Two draws with the same key
//! always agree, and draws with different keys never share state, so results
//! do not depend on the order in which agents or seeds are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Theta = 1,
    Context = 2,
    Reward = 3,
    Action = 4,
    Optimizer = 5,
    TreeNoise = 6,
}

/// Full key of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub round: u64,
    pub agent: u64,
    pub arm: u32,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, round: u64, agent: u64) -> Self {
        Self {
            seed,
            purpose,
            round,
            agent,
            arm: 0,
        }
    }

    pub fn with_arm(mut self, arm: u32) -> Self {
        self.arm = arm;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        let tag = ((self.purpose as u64) << 32) | self.arm as u64;
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        key[16..24].copy_from_slice(&self.round.to_le_bytes());
        key[24..32].copy_from_slice(&self.agent.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Shorthand for `StreamKey::new(..).rng()`.
pub fn stream(seed: u64, purpose: Purpose, round: u64, agent: u64) -> ChaCha8Rng {
    StreamKey::new(seed, purpose, round, agent).rng()
}
