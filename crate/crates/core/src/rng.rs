//! Reproducible standard-normal streams.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`).
//! Normals come from the Box-Muller transform applied to consecutive pairs
//! of 64-bit outputs:
//!
//! ```text
//! u1 = ((w1 >> 11) + 1) * 2^-53        in (0, 1]
//! u2 = (w2 >> 11) * 2^-53              in [0, 1)
//! z1 = sqrt(-2 ln u1) * cos(2 pi u2)
//! z2 = sqrt(-2 ln u1) * sin(2 pi u2)
//! ```
//!
//! Both values of a pair are used, in order. Bundles are filled
//! sample-major, pixel-minor. Changing any of this changes every seeded
//! output in the crate.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed), spare: None }
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = self.next_normal());
    }
}

/// `len` standard normals from a fresh stream seeded with `seed`.
pub fn standard_normals(seed: u64, len: usize) -> Vec<f64> {
    let mut s = NormalStream::new(seed);
    let mut v = vec![0.0; len];
    s.fill_normal(&mut v);
    v
}
