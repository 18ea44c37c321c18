//! Seeded pseudo-random numbers (SplitMix64).
//!
//! Every generator in this pipeline must be a pure function of its seed so
//! that datasets, templates and training runs reproduce bit-exactly; a small
//! self-contained PRNG keeps that guarantee independent of external crates.

use crate::fmath;

const TAU: f64 = 2.0 * core::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derive an independent stream, e.g. one per clip or per keypoint.
    pub fn fork(&self, salt: u64) -> Self {
        let mut r = Rng::new(self.state ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        r.next_u64();
        Rng::new(r.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller (no cached spare, so the stream is a
    /// pure function of call order).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(TAU * u2)
    }

    pub fn normal_scaled(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        sigma * self.normal()
    }
}
