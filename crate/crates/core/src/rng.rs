//! Seeded, platform-independent random streams.
//!
//! Every consumer draws from its own ChaCha8 stream derived from the run
//! seed, a purpose tag, and an index (usually the epoch), so any stream
//! can be reconstructed without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Synthetic = 4,
    Subset = 5,
    Test = 6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRng {
    pub seed: u64,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng { seed }
    }

    pub fn stream(&self, purpose: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((purpose as u64) << 48) ^ index);
        rng
    }
}
