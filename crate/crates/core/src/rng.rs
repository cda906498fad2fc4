//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha8 stream from a base seed and a path
//! of integers (image id, pass index, ...), so results never depend on the
//! order in which streams are created or on how work is split across
//! threads. Each helper consumes a fixed number of 64-bit draws.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed), |acc, p| mix(acc ^ mix(*p)))
}

pub trait Uniform01 {
    /// One draw, uniform on `[0, 1)` with 53 bits of resolution.
    fn uniform01(&mut self) -> f64;
}

#[derive(Debug, Clone)]
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Stream(ChaCha8Rng::seed_from_u64(derive_seed(seed, path)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[lo, hi)`; one draw.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform integer in `0..=max`; one draw.
    pub fn int_inclusive(&mut self, max: usize) -> usize {
        let v = (self.uniform01() * (max as f64 + 1.0)) as usize;
        v.min(max)
    }

    /// Bernoulli(`p`); one draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// Fisher–Yates permutation of `0..n`; `n − 1` draws.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.int_inclusive(i);
            v.swap(i, j);
        }
        v
    }
}

impl Uniform01 for Stream {
    fn uniform01(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
