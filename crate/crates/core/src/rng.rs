//! Named random sub-streams derived from one top-level seed.
//!
//! Each consumer asks for a stream by name plus integer coordinates
//! (iteration, task slot, ...). Streams are independent of each other and of
//! the order in which they are requested, which keeps results identical
//! regardless of how work is spread over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed for stream `name` at `coords`.
    pub fn derive(&self, name: &str, coords: &[u64]) -> u64 {
        let mut h = splitmix(self.seed);
        for b in name.bytes() {
            h = splitmix(h ^ u64::from(b));
        }
        // Separator so ("ab", []) and ("a", [b]) cannot collide trivially.
        h = splitmix(h ^ 0xff);
        for &c in coords {
            h = splitmix(h ^ c);
        }
        h
    }

    pub fn rng(&self, name: &str, coords: &[u64]) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(name, coords))
    }
}
