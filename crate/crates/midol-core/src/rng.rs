//! Deterministic splittable random streams.
//!
//! One global seed expands into independent per-consumer streams via
//! counter-based SplitMix64 derivation: `derive` hashes a label into a new
//! seed, so adding a consumer never perturbs the draws of existing ones.
//! Every sequence is reproducible byte-for-byte from `(seed, labels)`.

use crate::math;
use alloc::vec::Vec;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream seeded from a `u64`.
#[derive(Debug, Clone)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        // One warm-up mix so seed 0 and seed 1 diverge immediately.
        let mut state = seed;
        let _ = splitmix64(&mut state);
        SeedStream { state }
    }

    /// Derive an independent child stream from a label.
    ///
    /// The child's seed is a hash of `(current seed, label)`; the parent's
    /// own state is not advanced.
    pub fn derive(&self, label: &str) -> SeedStream {
        let mut h = self.state ^ 0x51_7c_c1_b7_27_22_0a_95;
        for &b in label.as_bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        SeedStream::new(h)
    }

    /// Derive an independent child stream from an index (e.g. a step counter).
    pub fn derive_u64(&self, index: u64) -> SeedStream {
        let mut h = self.state ^ index.wrapping_mul(GOLDEN);
        let _ = splitmix64(&mut h);
        SeedStream::new(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller. Draws two uniforms per sample so the
    /// stream position is input-independent.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * math::PI * u2)
    }

    /// A vector of standard normals.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
