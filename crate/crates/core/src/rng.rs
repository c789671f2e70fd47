//! Portable seeded random source.
//!
//! Streams come from xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`). Bounded integers and unit floats are derived here
//! rather than through a generic sampling library, so a given seed yields
//! the same draws in any implementation of these two generators.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Identifier recorded in run metadata next to every seed.
pub const ALGORITHM_ID: &str = "xoshiro256++/splitmix64-seed/v1";

#[derive(Debug, Clone)]
pub struct TokenRng {
    inner: Xoshiro256PlusPlus,
}

impl TokenRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` by rejection sampling, no modulo bias.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below() needs a positive bound");
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound) - 1;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Uniform random permutation of `0..n` (Fisher-Yates, high to low).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }

    /// `count` distinct indices from `0..n`, uniformly, in ascending order.
    ///
    /// Partial Fisher-Yates over the first `count` slots.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool.sort_unstable();
        pool
    }
}
