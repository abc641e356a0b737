//! Deterministic xoshiro256** generator with SplitMix64 seeding.
//!
//! Streams are derived from a `(seed, index...)` path rather than by advancing a
//! parent generator, so a child's sequence never depends on the order in which
//! siblings are created or consumed.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Single-owner random stream. Not `Sync` by intent of use: split instead of sharing.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    seed: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for w in &mut s {
            *w = splitmix64(&mut sm);
        }
        // xoshiro must not start from the all-zero state; SplitMix64 never
        // emits four consecutive zeros, but guard anyway.
        if s == [0; 4] {
            s[0] = GOLDEN_GAMMA;
        }
        Self { s, seed, spare_normal: None }
    }

    /// Child stream keyed by `seed` and an index path, e.g. `(sample, layer)`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut sm = seed;
        let mut key = splitmix64(&mut sm);
        for &idx in path {
            let mut mix = key ^ idx.wrapping_mul(GOLDEN_GAMMA).rotate_left(17);
            key = splitmix64(&mut mix) ^ splitmix64(&mut mix).rotate_left(32);
        }
        let mut rng = Self::new(key);
        rng.seed = seed;
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection for exact uniformity.
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal draw via Box–Muller; the sine partner is cached.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    /// One draw from N(mean, sigma²).
    pub fn gauss(&mut self, mean: f64, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(mean + sigma * self.standard_normal())
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Free-function form of [`Rng::gauss`].
pub fn gauss_sample(rng: &mut Rng, mean: f64, sigma: f64) -> Result<f64> {
    rng.gauss(mean, sigma)
}
