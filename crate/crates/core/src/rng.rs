//! Seeded, splittable random number generation.
//!
//! Every stream is a ChaCha12 generator keyed by a 64-bit value. Splitting
//! derives a child key from the parent key and an index with a SplitMix64
//! finalizer, so `rng.split(i)` depends only on the parent's key and `i`,
//! never on how many numbers the parent has already produced. Parallel
//! workers that split by item index therefore see the same streams as a
//! serial loop.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    inner: ChaCha12Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let key = splitmix64(seed);
        Self {
            key,
            inner: ChaCha12Rng::seed_from_u64(key),
        }
    }

    /// Key identifying this stream.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Independent child stream. Pure in `(self.key, index)`.
    pub fn split(&self, index: u64) -> Rng {
        let key = splitmix64(self.key ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)));
        Rng {
            key,
            inner: ChaCha12Rng::seed_from_u64(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform_in(lo, hi)).collect()
    }
}
