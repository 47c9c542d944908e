//! Counter-based seeded random generation.
//!
//! Built on ChaCha8 with its 64-bit stream counter so that Monte-Carlo trial
//! `t` can draw from stream `t` and get the same values no matter how trials
//! are scheduled across threads.

use super::mat::Complex64;
use crate::error::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Purposes multiplex independent substreams within one trial:
/// stream-id = trial * PURPOSE_STRIDE + purpose.
pub const PURPOSE_STRIDE: u64 = 8;

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        // SplitMix64 expansion of the 64-bit seed into the 256-bit key.
        let mut z = seed;
        for chunk in key.chunks_exact_mut(8) {
            z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut x = z;
            x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            x ^= x >> 31;
            chunk.copy_from_slice(&x.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        RngStream { rng, seed, stream }
    }

    /// Stream for Monte-Carlo trial `trial` and a fixed purpose slot.
    pub fn for_trial(seed: u64, trial: u64, purpose: u64) -> Self {
        debug_assert!(purpose < PURPOSE_STRIDE);
        RngStream::new(seed, trial * PURPOSE_STRIDE + purpose)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One circularly-symmetric complex Gaussian sample with E{|z|^2} = variance.
    pub fn next_complex_gaussian(&mut self, variance: f64) -> Complex64 {
        // Box-Muller; u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        let s = (variance / 2.0).sqrt();
        Complex64::new(s * r * theta.cos(), s * r * theta.sin())
    }
}

/// `n` i.i.d. circularly-symmetric complex normals, per-sample variance
/// `variance` (real and imaginary parts each carry variance/2).
pub fn gaussian_complex(rng: &mut RngStream, n: usize, variance: f64) -> Result<Vec<Complex64>> {
    if !(variance > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gaussian_complex requires variance > 0, got {variance}"
        )));
    }
    Ok((0..n).map(|_| rng.next_complex_gaussian(variance)).collect())
}
