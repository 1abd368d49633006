//! Counter-based random streams.
//!
//! Every stream is identified by a key derived from a master seed and a path
//! of integers (subgroup id, draw index, replication index, ...). Outputs are
//! a pure function of `(key, counter)`, so results never depend on the order
//! in which streams are consumed or on how work is scheduled across threads.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child key from a parent key and one path component.
#[inline]
pub fn derive_key(parent: u64, component: u64) -> u64 {
    mix64(parent ^ mix64(component.wrapping_add(GOLDEN_GAMMA)).rotate_left(17))
}

/// Derives a key from a master seed and a path of components.
pub fn key_for(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed ^ 0x5851_F42D_4C95_7F2D), |k, &c| derive_key(k, c))
}

/// Stream tags keep independent consumers of one seed apart.
pub mod tags {
    pub const MC_DRAWS: u64 = 1;
    pub const RANDOM_SPLIT: u64 = 2;
    pub const REPLICATION: u64 = 3;
    pub const DATA: u64 = 4;
    pub const HOLDOUT: u64 = 5;
    pub const METHOD: u64 = 6;
}

/// A SplitMix-style generator whose `i`-th output is `mix(key + i·γ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn from_path(seed: u64, path: &[u64]) -> Self {
        Self::new(key_for(seed, path))
    }

    /// Independent child stream.
    pub fn split(&self, component: u64) -> Self {
        Self::new(derive_key(self.key, component))
    }

    /// Output at an arbitrary position without advancing.
    #[inline]
    pub fn at(&self, position: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(position.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform draw in `[0,1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
