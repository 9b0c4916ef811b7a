//! Counter-based random streams.
//!
//! A stream is identified by a `(seed, stream)` pair and backed by ChaCha8
//! with the ChaCha stream word set to `stream`; identical pairs always replay
//! the same draws. Child streams are derived with [`RngStream::child`]: the
//! parent pair is hashed with SplitMix64 into a fresh seed and the child index
//! becomes the stream word. Adding children never perturbs existing ones, so
//! sweep points and trajectories can be generated in any order or on any
//! number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub const fn from_seed(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Instantiates the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Derives the `index`-th child stream.
    pub fn child(&self, index: u64) -> Self {
        let seed = splitmix64(splitmix64(self.seed) ^ splitmix64(self.stream ^ 0xD1B5_4A32_D192_ED03));
        Self { seed, stream: index }
    }
}
