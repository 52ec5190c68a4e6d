//! Seeded, splittable random streams.
//!
//! Every stochastic operation takes an explicit [`Seed`]. Child seeds are
//! derived with a SplitMix64 finalizer so that `(seed, label)` pairs map to
//! statistically independent ChaCha8 streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent child seed for the given label.
    pub fn derive(self, label: u64) -> Seed {
        Seed(splitmix(self.0 ^ splitmix(label.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    /// Shorthand for a two-level derivation, e.g. `(scene index, purpose)`.
    pub fn derive2(self, a: u64, b: u64) -> Seed {
        self.derive(a).derive(b)
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
