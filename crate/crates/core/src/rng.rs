//! Reproducible random streams.
//!
//! Every generator in this crate draws from [`SeededRng`], whose output is
//! pinned down exactly so that fixtures can be regenerated in other
//! languages:
//!
//! * engine: xoshiro256++ (version 1.0), state seeded from the `u64` seed
//!   with SplitMix64 (four consecutive outputs);
//! * uniform: `(next_u64 >> 11) * 2^-53`, a value in `[0, 1)`;
//! * normal: Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)` with two fresh
//!   uniforms per draw (the sine branch is discarded);
//! * index in `[0, n)`: `floor(uniform * n)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Identifier recorded in reports next to every seed.
pub const RNG_ALGORITHM: &str = "xoshiro256++/splitmix64-seed/box-muller-cos v1";

#[derive(Debug, Clone)]
pub struct SeededRng {
    engine: Xoshiro256PlusPlus,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            engine: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.engine.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        std * self.standard_normal()
    }

    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// `k` distinct indices from `0..n` via a partial Fisher–Yates shuffle,
    /// returned in ascending order.
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }

    /// Full Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..n.saturating_sub(1) {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool
    }
}
