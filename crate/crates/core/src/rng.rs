//! Counter-based pseudo random numbers.
//!
//! The generator is SplitMix64 written in counter form: the `n`-th output is
//! `mix(seed + n * 0x9E3779B97F4A7C15)` with the standard SplitMix64
//! finalizer. The complete state is `(seed, counter)`, so streams are
//! reproducible on every platform and can be checkpointed exactly.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Rebuilds a generator from a saved `(seed, counter)` pair.
    pub fn from_state(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn state(&self) -> (u64, u64) {
        (self.seed, self.counter)
    }

    /// An independent generator keyed by `stream`. Does not advance `self`.
    pub fn fork(&self, stream: u64) -> Self {
        let key = mix(self.seed ^ mix(stream.wrapping_add(GOLDEN_GAMMA)));
        Self::new(mix(key.wrapping_add(self.counter)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; unbiased (Lemire's method with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller (cosine branch only; two draws per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal with standard deviation `std`, resampled until it falls in
    /// `[-bound, bound]` (absolute bound, as in the usual ViT initialiser
    /// with `bound = 2`).
    pub fn truncated_normal(&mut self, std: f64, bound: f64) -> f64 {
        loop {
            let x = self.normal() * std;
            if x.abs() <= bound {
                return x;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
