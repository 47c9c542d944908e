//! Discrete Fourier transform.
//!
//! Convention: forward X[k] = sum_n x[n] e^{-j2*pi*kn/K}, inverse
//! x[n] = (1/K) sum_k X[k] e^{+j2*pi*nk/K}. The fast path is an iterative
//! radix-2 decimation-in-time FFT; `dft_naive` is the O(K^2) summation kept
//! as an independent test oracle and for non-power-of-two lengths.

use super::mat::Complex64;
use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Forward or inverse DFT of a length-`k` vector. `k` must be a power of two;
/// arbitrary lengths are served by [`dft_naive`] only.
pub fn dft(x: &[Complex64], k: usize, inverse: bool) -> Result<Vec<Complex64>> {
    if x.len() != k {
        return Err(Error::Dimension {
            context: "dft",
            expected: k.to_string(),
            got: x.len().to_string(),
        });
    }
    if !k.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "dft fast path requires a power-of-two length, got {k} (use dft_naive)"
        )));
    }
    let mut buf = x.to_vec();
    fft_in_place(&mut buf, inverse);
    if inverse {
        let scale = 1.0 / k as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    Ok(buf)
}

/// Direct O(K^2) summation. Test oracle; works for any length.
pub fn dft_naive(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let k = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); k];
    for (bin, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let ang = sign * 2.0 * PI * (bin * n % k) as f64 / k as f64;
            acc += v * Complex64::new(ang.cos(), ang.sin());
        }
        *o = if inverse { acc / k as f64 } else { acc };
    }
    out
}

/// Iterative radix-2 DIT FFT. Unnormalized; `inverse` flips the twiddle sign.
fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j ^= bit;
        if i < j {
            buf.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let ang = sign * 2.0 * PI / len as f64;
        let wstep = Complex64::new(ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..half {
                let u = buf[start + k];
                let t = w * buf[start + k + half];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
                w *= wstep;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Circular convolution over the common length (test helper for the
/// convolution-theorem invariant and the filter equivalences).
pub fn circular_convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let k = a.len();
    assert_eq!(k, b.len());
    let mut out = vec![Complex64::new(0.0, 0.0); k];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, av) in a.iter().enumerate() {
            acc += av * b[(i + k - t) % k];
        }
        *o = acc;
    }
    out
}
