//! Splittable seeding: one top-level seed, labeled child streams per purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A node in a tree of deterministic seeds.
///
/// `SeedStream::new(s).child("mixup").index(3)` always names the same
/// generator, independent of how many draws other streams have made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            state: splitmix(seed ^ 0x5EED_0FC0_FFEE),
        }
    }

    pub fn child(&self, label: &str) -> Self {
        Self {
            state: splitmix(self.state ^ fnv1a(label.as_bytes())),
        }
    }

    pub fn index(&self, i: u64) -> Self {
        Self {
            state: splitmix(self.state.wrapping_add(splitmix(i.wrapping_add(1)))),
        }
    }

    pub fn seed(&self) -> u64 {
        self.state
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
