//! Precoder constructions.
//!
//! Frequency domain: exact ZF, subcarrier-shared ZF, matched filter, truncated
//! polynomial expansion, and the additive recursion
//!
//! ```text
//! U' = U + (mu/M) H^H G^-1 (I - H U)
//! ```
//!
//! driven either by expansion order (initialization) or by OFDM block index
//! (tracking). Time domain: the truncated convolutional filter whose taps are
//! the inverse DFT of the frequency coefficients, updated recursively from the
//! CIR without ever leaving the tap domain.

use crate::error::{Error, Result};
use crate::numerics::{dft, hermitian_eig, solve_hermitian, CMat, Complex64};
use std::io::{Read, Write};

// ---------------------------------------------------------------------------
// Frequency-domain precoders
// ---------------------------------------------------------------------------

/// Per-subcarrier M x P precoding matrices for one OFDM block.
#[derive(Debug, Clone)]
pub struct FreqPrecoder {
    /// One M x P matrix per subcarrier.
    pub mats: Vec<CMat>,
    pub mu: f64,
    /// Recursion counter: expansion order during initialization, block index
    /// while tracking.
    pub counter: u32,
}

impl FreqPrecoder {
    pub fn subcarriers(&self) -> usize {
        self.mats.len()
    }
}

/// Exact ZF: U = H^H (H H^H)^{-1} per subcarrier. Independent of G.
pub fn zf_exact(h: &[CMat], _gains: &[f64]) -> Result<FreqPrecoder> {
    let mats = h
        .iter()
        .enumerate()
        .map(|(k, hk)| zf_exact_one(hk, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(FreqPrecoder {
        mats,
        mu: 1.0,
        counter: 0,
    })
}

pub fn zf_exact_one(hk: &CMat, k: usize) -> Result<CMat> {
    let hh = hk.mul_own_hermitian();
    let p = hh.rows();
    let x = solve_hermitian(&hh, &CMat::identity(p)).map_err(|e| match e {
        Error::Singular { cond_estimate, .. } => Error::Singular {
            context: format!("zf_exact: H H^H rank-deficient at subcarrier {k}"),
            cond_estimate,
        },
        other => other,
    })?;
    Ok(hk.hermitian_mul(&x))
}

/// Subcarrier-shared ZF: groups of B consecutive subcarriers reuse the
/// precoder computed at the first subcarrier of the group.
pub fn zf_shared(h: &[CMat], gains: &[f64], b: usize) -> Result<FreqPrecoder> {
    if b < 1 {
        return Err(Error::InvalidConfig("zf_shared requires B >= 1".into()));
    }
    let _ = gains;
    let k_total = h.len();
    let mut mats = Vec::with_capacity(k_total);
    let mut group_start = 0;
    while group_start < k_total {
        let lead = zf_exact_one(&h[group_start], group_start)?;
        let end = (group_start + b).min(k_total);
        for _ in group_start..end {
            mats.push(lead.clone());
        }
        group_start = end;
    }
    Ok(FreqPrecoder {
        mats,
        mu: 1.0,
        counter: 0,
    })
}

/// Matched filter: U = (1/M) H^H G^{-1}.
pub fn mf(h: &[CMat], gains: &[f64]) -> FreqPrecoder {
    scaled_hermitian(h, gains, 1.0)
}

/// Zeroth-order initialization U^(0) = (mu/M) H^H G^{-1}.
pub fn zero_order_init(h: &[CMat], gains: &[f64], mu: f64) -> FreqPrecoder {
    scaled_hermitian(h, gains, mu)
}

fn scaled_hermitian(h: &[CMat], gains: &[f64], mu: f64) -> FreqPrecoder {
    let inv_g: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
    let mats = h
        .iter()
        .map(|hk| {
            let m = hk.cols() as f64;
            hk.hermitian().scale_cols(&inv_g).scale_real(mu / m)
        })
        .collect();
    FreqPrecoder {
        mats,
        mu,
        counter: 0,
    }
}

/// Truncated polynomial expansion of order Q:
/// U^(Q) = (mu/M) H^H G^{-1} sum_{q=0}^{Q} Lambda^q with
/// Lambda = I - (mu/M) H H^H G^{-1}, evaluated by Horner's rule.
pub fn tpe(h: &[CMat], gains: &[f64], q: u32, mu: f64) -> FreqPrecoder {
    let inv_g: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
    let p = gains.len();
    let eye = CMat::identity(p);
    let mats = h
        .iter()
        .map(|hk| {
            let m = hk.cols() as f64;
            let lambda = eye.sub(&hk.mul_own_hermitian().scale_cols(&inv_g).scale_real(mu / m));
            let mut poly = eye.clone();
            for _ in 0..q {
                poly = eye.add(&lambda.mul(&poly));
            }
            hk.hermitian_mul(&poly.scale_rows(&inv_g)).scale_real(mu / m)
        })
        .collect();
    FreqPrecoder {
        mats,
        mu,
        counter: q,
    }
}

/// One recursion applied at every subcarrier:
/// U' = U + (mu/M) H^H G^{-1} (I - H U).
///
/// The residual I - H U is computed with compensated (error-free
/// transformation) dot products so the deep cancellation near convergence
/// keeps full relative accuracy; the closed-form MSE identity is asserted to
/// 1e-9 against this path.
pub fn recursion_step(u: &FreqPrecoder, h: &[CMat], gains: &[f64], mu: f64) -> FreqPrecoder {
    assert_eq!(u.mats.len(), h.len(), "precoder/channel subcarrier mismatch");
    let inv_g: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
    let mats = u
        .mats
        .iter()
        .zip(h.iter())
        .map(|(uk, hk)| recursion_step_one(uk, hk, &inv_g, mu))
        .collect();
    FreqPrecoder {
        mats,
        mu,
        counter: u.counter + 1,
    }
}

pub fn recursion_step_one(uk: &CMat, hk: &CMat, inv_g: &[f64], mu: f64) -> CMat {
    let m = hk.cols() as f64;
    let c = residual_identity_minus(hk, uk);
    let correction = hk
        .hermitian_mul(&c.scale_rows(inv_g))
        .scale_real(mu / m);
    uk.add(&correction)
}

/// Order recursion (initialization): counter is the expansion order.
pub fn order_recursion_step(u: &FreqPrecoder, h: &[CMat], gains: &[f64], mu: f64) -> FreqPrecoder {
    recursion_step(u, h, gains, mu)
}

/// Time recursion (tracking): identical arithmetic, counter is the block index.
pub fn time_recursion_step(u: &FreqPrecoder, h: &[CMat], gains: &[f64], mu: f64) -> FreqPrecoder {
    recursion_step(u, h, gains, mu)
}

// ---------------------------------------------------------------------------
// Compensated residual I - H U
// ---------------------------------------------------------------------------

#[inline(always)]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline(always)]
fn residual_impl<F>(hk: &CMat, uk: &CMat, two_prod: F) -> CMat
where
    F: Fn(f64, f64) -> (f64, f64) + Copy,
{
    let p = hk.rows();
    let m = hk.cols();
    debug_assert_eq!(uk.rows(), m);
    debug_assert_eq!(uk.cols(), p);
    #[inline(always)]
    fn acc<F: Fn(f64, f64) -> (f64, f64)>(
        two_prod: &F,
        a: f64,
        b: f64,
        sum: &mut f64,
        comp: &mut f64,
    ) {
        let (prod, perr) = two_prod(a, b);
        let (s, serr) = two_sum(*sum, prod);
        *sum = s;
        *comp += serr + perr;
    }

    let mut out = CMat::zeros(p, p);
    for i in 0..p {
        let hrow = hk.row(i);
        for j in 0..p {
            let (mut sr, mut cr) = if i == j { (1.0, 0.0) } else { (0.0, 0.0) };
            let (mut si, mut ci) = (0.0, 0.0);
            for (mi, hv) in hrow.iter().enumerate() {
                let uv = uk[(mi, j)];
                // re -= hr*ur - hi*ui ; im -= hr*ui + hi*ur
                acc(&two_prod, -hv.re, uv.re, &mut sr, &mut cr);
                acc(&two_prod, hv.im, uv.im, &mut sr, &mut cr);
                acc(&two_prod, -hv.re, uv.im, &mut si, &mut ci);
                acc(&two_prod, -hv.im, uv.re, &mut si, &mut ci);
            }
            out[(i, j)] = Complex64::new(sr + cr, si + ci);
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "fma")]
unsafe fn residual_fma(hk: &CMat, uk: &CMat) -> CMat {
    residual_impl(hk, uk, |a, b| {
        let prod = a * b;
        (prod, f64::mul_add(a, b, -prod))
    })
}

fn residual_portable(hk: &CMat, uk: &CMat) -> CMat {
    // Dekker split TwoProd; same exactly-rounded values as the FMA path.
    residual_impl(hk, uk, |a, b| {
        const SPLIT: f64 = 134217729.0; // 2^27 + 1
        let prod = a * b;
        let ta = SPLIT * a;
        let ahi = ta - (ta - a);
        let alo = a - ahi;
        let tb = SPLIT * b;
        let bhi = tb - (tb - b);
        let blo = b - bhi;
        let err = ((ahi * bhi - prod) + ahi * blo + alo * bhi) + alo * blo;
        (prod, err)
    })
}

/// C = I - H U with compensated dot products.
pub fn residual_identity_minus(hk: &CMat, uk: &CMat) -> CMat {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("fma") {
            return unsafe { residual_fma(hk, uk) };
        }
    }
    residual_portable(hk, uk)
}

// ---------------------------------------------------------------------------
// Step-size rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum StepSizeRule<'a> {
    Independent,
    Correlated(&'a CMat),
    IndependentNoisy(f64),
    CorrelatedNoisy(&'a CMat, f64),
    Manual(f64),
}

/// Step size for the recursion. Independent antennas: mu = 1 (eigenvalues of
/// (1/M) H H^H concentrate at 1). Correlated: mu = 2/(lmax(R) + lmin(R)).
/// Imperfect channel shifts every eigenvalue by sigma_h^2, so mu = 1 + sigma_h^2
/// and 2/(lmax + lmin + 2 sigma_h^2) respectively.
pub fn step_size(rule: &StepSizeRule) -> Result<f64> {
    match rule {
        StepSizeRule::Independent => Ok(1.0),
        StepSizeRule::IndependentNoisy(s) => {
            require_nonneg(*s)?;
            Ok(1.0 + s)
        }
        StepSizeRule::Correlated(r) => {
            let (lmin, lmax) = extremal_eigs(r)?;
            Ok(2.0 / (lmax + lmin))
        }
        StepSizeRule::CorrelatedNoisy(r, s) => {
            require_nonneg(*s)?;
            let (lmin, lmax) = extremal_eigs(r)?;
            Ok(2.0 / (lmax + lmin + 2.0 * s))
        }
        StepSizeRule::Manual(mu) => {
            if !(*mu > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "manual step size must be positive, got {mu}"
                )));
            }
            Ok(*mu)
        }
    }
}

fn require_nonneg(s: f64) -> Result<()> {
    if s < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "sigma_h^2 must be >= 0, got {s}"
        )));
    }
    Ok(())
}

fn extremal_eigs(r: &CMat) -> Result<(f64, f64)> {
    let (eigs, _) = hermitian_eig(r)?;
    let lmin = *eigs.first().unwrap();
    let lmax = *eigs.last().unwrap();
    if lmin < -1e-10 * lmax.abs().max(1.0) {
        return Err(Error::NotPositiveDefinite {
            pivot: lmin,
            index: 0,
        });
    }
    Ok((lmin.max(0.0), lmax))
}

// ---------------------------------------------------------------------------
// Convolutional precoder
// ---------------------------------------------------------------------------

/// Time-domain precoding filter, taps on l in -L..L (modulo K), one filter per
/// (antenna, user) pair.
#[derive(Debug, Clone)]
pub struct ConvPrecoder {
    pub antennas: usize,
    pub users: usize,
    pub fft_size: usize,
    half_window: usize,
    full: bool,
    /// Tap coefficients, strides [m][p][w] with `win_len` taps per pair.
    taps: Vec<Complex64>,
    pub mu: f64,
    pub gains: Vec<f64>,
    err_norms: Vec<f64>,
    /// Error sequence e[i][p][l] from the most recent update, for inspection.
    pub last_error: Option<Vec<Complex64>>,
}

impl ConvPrecoder {
    pub fn win_len(&self) -> usize {
        if self.full {
            self.fft_size
        } else {
            2 * self.half_window + 1
        }
    }

    pub fn half_window(&self) -> usize {
        self.half_window
    }

    pub fn is_full_window(&self) -> bool {
        self.full
    }

    /// Circular shift of tap slot `w`: 0..K-1 for a full window, else
    /// w - half_window in -L..L.
    #[inline]
    pub fn shift_at(&self, w: usize) -> i64 {
        if self.full {
            w as i64
        } else {
            w as i64 - self.half_window as i64
        }
    }

    #[inline]
    fn pair_base(&self, m: usize, p: usize) -> usize {
        (m * self.users + p) * self.win_len()
    }

    pub fn taps_at(&self, m: usize, p: usize) -> &[Complex64] {
        let b = self.pair_base(m, p);
        &self.taps[b..b + self.win_len()]
    }

    pub fn all_finite(&self) -> bool {
        self.taps.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Frequency response of the filter bank: the per-subcarrier precoding
    /// matrices this filter realizes.
    pub fn to_freq(&self) -> Result<FreqPrecoder> {
        let k = self.fft_size;
        let mut mats = vec![CMat::zeros(self.antennas, self.users); k];
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        for m in 0..self.antennas {
            for p in 0..self.users {
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for (w, tap) in self.taps_at(m, p).iter().enumerate() {
                    let idx = self.shift_at(w).rem_euclid(k as i64) as usize;
                    buf[idx] = *tap;
                }
                let freq = dft(&buf, k, false)?;
                for (kk, v) in freq.iter().enumerate() {
                    mats[kk][(m, p)] = *v;
                }
            }
        }
        Ok(FreqPrecoder {
            mats,
            mu: self.mu,
            counter: 0,
        })
    }

    /// Recursive filter update from the block CIR:
    ///
    /// ```text
    /// e_{i,p}[l]   = d[i-p] d[l] - sum_m c_{i,m}[l] (*) w_{m,p}[l]
    /// w_{m,p}'[l]  = w_{m,p}[l] + (mu/M) sum_i g_i^{-1} c*_{i,m}[-l] (*) e_{i,p}[l]
    /// ```
    ///
    /// All convolutions are circular over K; the stored taps keep only the
    /// -L..L window, which is where truncation happens. `cir[i][m]` holds the
    /// length-L CIR of user i, antenna m for this block.
    pub fn filter_update(&mut self, cir: &[Vec<&[Complex64]>], block: usize) -> Result<()> {
        self.filter_update_impl(cir, block, false)
    }

    pub(crate) fn filter_update_impl(
        &mut self,
        cir: &[Vec<&[Complex64]>],
        block: usize,
        negate_correction: bool,
    ) -> Result<()> {
        let k = self.fft_size;
        let users = self.users;
        let antennas = self.antennas;
        if cir.len() != users || cir.iter().any(|row| row.len() != antennas) {
            return Err(Error::Dimension {
                context: "filter_update",
                expected: format!("{users}x{antennas} CIR grid"),
                got: format!("{}x{}", cir.len(), cir.first().map_or(0, |r| r.len())),
            });
        }
        let win = self.win_len();

        // Error sequences e[i][p][0..K].
        let mut err = vec![Complex64::new(0.0, 0.0); users * users * k];
        for i in 0..users {
            for p in 0..users {
                let base = (i * users + p) * k;
                for m in 0..antennas {
                    let c = cir[i][m];
                    let tb = self.pair_base(m, p);
                    for (lc, cv) in c.iter().enumerate() {
                        if cv.re == 0.0 && cv.im == 0.0 {
                            continue;
                        }
                        for w in 0..win {
                            let idx = (lc as i64 + self.shift_at(w)).rem_euclid(k as i64) as usize;
                            err[base + idx] -= cv * self.taps[tb + w];
                        }
                    }
                }
                if i == p {
                    err[base] += 1.0;
                }
            }
        }

        let err_norm = err.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        // Divergence guard: 10x growth over 5 recursions AND an error beyond
        // the all-zero filter's level (|e|^2 = P). The second condition keeps
        // legitimate high-Doppler tracking, where the error climbs from near
        // zero after an oracle init, from tripping the guard.
        if self.err_norms.len() >= 5 {
            let past = self.err_norms[self.err_norms.len() - 5];
            if err_norm > 10.0 * past && err_norm * err_norm > users as f64 {
                return Err(Error::Divergence {
                    block,
                    ratio: err_norm / past,
                    span: 5,
                });
            }
        }
        self.err_norms.push(err_norm);

        // Tap update, evaluated only at the stored window shifts.
        let m_f = antennas as f64;
        let sign = if negate_correction { -1.0 } else { 1.0 };
        let scale = sign * self.mu / m_f;
        for m in 0..antennas {
            for p in 0..users {
                let tb = self.pair_base(m, p);
                for w in 0..win {
                    let shift = self.shift_at(w);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..users {
                        let c = cir[i][m];
                        let base = (i * users + p) * k;
                        let mut conv = Complex64::new(0.0, 0.0);
                        for (lc, cv) in c.iter().enumerate() {
                            let idx = (shift + lc as i64).rem_euclid(k as i64) as usize;
                            conv += cv.conj() * err[base + idx];
                        }
                        acc += conv / self.gains[i];
                    }
                    self.taps[tb + w] += scale * acc;
                }
            }
        }
        self.last_error = Some(err);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"LSAW")?;
        for dim in [
            1u32,
            self.antennas as u32,
            self.users as u32,
            self.fft_size as u32,
            self.half_window as u32,
            self.full as u32,
        ] {
            w.write_all(&dim.to_le_bytes())?;
        }
        w.write_all(&self.mu.to_le_bytes())?;
        for g in &self.gains {
            w.write_all(&g.to_le_bytes())?;
        }
        for v in &self.taps {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ConvPrecoder> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"LSAW" {
            return Err(Error::InvalidConfig("bad precoder magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::InvalidConfig(format!(
                "bad precoder version {version}"
            )));
        }
        let antennas = read_u32(r)? as usize;
        let users = read_u32(r)? as usize;
        let fft_size = read_u32(r)? as usize;
        let half_window = read_u32(r)? as usize;
        let full = read_u32(r)? != 0;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mu = read_f64(r)?;
        let gains: Vec<f64> = (0..users)
            .map(|_| read_f64(r))
            .collect::<Result<Vec<_>>>()?;
        let win = if full { fft_size } else { 2 * half_window + 1 };
        let count = antennas * users * win;
        let mut taps = Vec::with_capacity(count);
        for _ in 0..count {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            taps.push(Complex64::new(re, im));
        }
        Ok(ConvPrecoder {
            antennas,
            users,
            fft_size,
            half_window,
            full,
            taps,
            mu,
            gains,
            err_norms: Vec::new(),
            last_error: None,
        })
    }
}

/// Convert a frequency precoder to filter taps: per (antenna, user) pair take
/// the inverse DFT of the K coefficients and keep the -L..L window (modulo K).
/// A half window of K/2 or more keeps every tap (untruncated).
pub fn freq_to_filter(
    freq: &FreqPrecoder,
    gains: &[f64],
    half_window: usize,
) -> Result<ConvPrecoder> {
    let k = freq.mats.len();
    if k == 0 {
        return Err(Error::InvalidConfig("empty precoder".into()));
    }
    let antennas = freq.mats[0].rows();
    let users = freq.mats[0].cols();
    let full = 2 * half_window + 1 >= k;
    let win = if full { k } else { 2 * half_window + 1 };
    let mut taps = vec![Complex64::new(0.0, 0.0); antennas * users * win];
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    for m in 0..antennas {
        for p in 0..users {
            for (kk, mat) in freq.mats.iter().enumerate() {
                buf[kk] = mat[(m, p)];
            }
            let time = dft(&buf, k, true)?;
            let base = (m * users + p) * win;
            for w in 0..win {
                let shift = if full {
                    w as i64
                } else {
                    w as i64 - half_window as i64
                };
                taps[base + w] = time[shift.rem_euclid(k as i64) as usize];
            }
        }
    }
    Ok(ConvPrecoder {
        antennas,
        users,
        fft_size: k,
        half_window,
        full,
        taps,
        mu: freq.mu,
        gains: gains.to_vec(),
        err_norms: Vec::new(),
        last_error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_pdp, generate_frame, PdpProfile};
    use crate::metrics::{init_mse_theory, precoder_mse};
    use crate::numerics::RngStream;

    fn random_h(p: usize, m: usize, seed: u64) -> CMat {
        let mut rng = RngStream::new(seed, 0);
        CMat::from_fn(p, m, |_, _| rng.next_complex_gaussian(1.0))
    }

    fn hu_minus_i(h: &CMat, u: &CMat) -> f64 {
        h.mul(u).sub(&CMat::identity(h.rows())).frob_norm()
    }

    #[test]
    fn zf_identity_channel() {
        let h = vec![CMat::identity(2)];
        let u = zf_exact(&h, &[1.0, 1.0]).unwrap();
        assert!(u.mats[0].sub(&CMat::identity(2)).frob_norm() < 1e-12);
    }

    #[test]
    fn zf_single_user_is_scaled_conjugate() {
        let h = random_h(1, 6, 41);
        let u = zf_exact(std::slice::from_ref(&h), &[1.0]).unwrap();
        let norm_sq: f64 = h.row(0).iter().map(|v| v.norm_sqr()).sum();
        for m in 0..6 {
            let expected = h[(0, m)].conj() / norm_sq;
            assert!((u.mats[0][(m, 0)] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_random_matches_elimination_oracle() {
        let h = random_h(3, 8, 42);
        let u = zf_exact(std::slice::from_ref(&h), &[1.0; 3]).unwrap();
        assert!(hu_minus_i(&h, &u.mats[0]) < 1e-9);

        // Independent oracle: invert H H^H by unpivoted Gauss-Jordan.
        let a = h.mul_own_hermitian();
        let n = 3;
        let mut aug = CMat::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = a[(i, j)];
            }
            aug[(i, n + i)] = Complex64::new(1.0, 0.0);
        }
        for col in 0..n {
            let d = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)];
                    for j in 0..2 * n {
                        let t = f * aug[(col, j)];
                        aug[(r, j)] -= t;
                    }
                }
            }
        }
        let inv = CMat::from_fn(n, n, |i, j| aug[(i, n + j)]);
        let oracle = h.hermitian_mul(&inv);
        assert!(u.mats[0].sub(&oracle).frob_norm() < 1e-9 * oracle.frob_norm());
    }

    #[test]
    fn zf_shared_b1_equals_exact() {
        let h: Vec<CMat> = (0..6).map(|k| random_h(2, 5, 100 + k)).collect();
        let exact = zf_exact(&h, &[1.0, 1.0]).unwrap();
        let shared = zf_shared(&h, &[1.0, 1.0], 1).unwrap();
        for (a, b) in exact.mats.iter().zip(shared.mats.iter()) {
            assert!(a.sub(b).frob_norm() < 1e-14);
        }
    }

    #[test]
    fn zf_shared_full_band_single_group() {
        let h: Vec<CMat> = (0..6).map(|k| random_h(2, 5, 200 + k)).collect();
        let shared = zf_shared(&h, &[1.0, 1.0], 6).unwrap();
        for bmat in &shared.mats[1..] {
            assert!(shared.mats[0].sub(bmat).frob_norm() < 1e-14);
        }
    }

    #[test]
    fn zf_shared_lossless_on_flat_channel() {
        // Single-tap channel: CFR constant over k, sharing loses nothing.
        let pdp = build_pdp(&PdpProfile::SingleTap, 7.68e6).unwrap();
        let mut rng = RngStream::new(7, 0);
        let f = generate_frame(&pdp, 5, 2, 1, 0.0, 66.7e-6, None, &[1.0, 1.0], 16, &mut rng)
            .unwrap();
        let h = f.block_cfr_mats(0);
        let exact = zf_exact(&h, &[1.0, 1.0]).unwrap();
        let shared = zf_shared(&h, &[1.0, 1.0], 12).unwrap();
        for (a, b) in exact.mats.iter().zip(shared.mats.iter()) {
            assert!(a.sub(b).frob_norm() < 1e-10);
        }
    }

    #[test]
    fn mf_single_user() {
        let h = random_h(1, 4, 55);
        let u = mf(std::slice::from_ref(&h), &[1.0]);
        for m in 0..4 {
            assert!((u.mats[0][(m, 0)] - h[(0, m)].conj() / 4.0).norm() < 1e-14);
        }
    }

    #[test]
    fn mf_orthogonal_rows_achieve_zf() {
        // Rows with squared norm M and mutually orthogonal: H U = I exactly.
        let m = 4;
        let mut h = CMat::zeros(2, m);
        h[(0, 0)] = Complex64::new(2.0, 0.0);
        h[(1, 1)] = Complex64::new(0.0, 2.0);
        let u = mf(std::slice::from_ref(&h), &[1.0, 1.0]);
        assert!(hu_minus_i(&h, &u.mats[0]) < 1e-12);
    }

    #[test]
    fn mf_leaves_residual_iui() {
        let h = random_h(3, 6, 77);
        let u = mf(std::slice::from_ref(&h), &[1.0; 3]);
        let hu = h.mul(&u.mats[0]);
        let mut off = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    off += hu[(i, j)].norm_sqr();
                }
            }
        }
        assert!(off.sqrt() > 0.01, "expected nonzero IUI, got {off}");
    }

    #[test]
    fn tpe_zero_order_is_scaled_mf() {
        let h = vec![random_h(3, 8, 91)];
        let mu = 0.8;
        let t = tpe(&h, &[1.0; 3], 0, mu);
        let base = mf(&h, &[1.0; 3]);
        let expected = base.mats[0].scale_real(mu);
        assert!(t.mats[0].sub(&expected).frob_norm() < 1e-13);
    }

    #[test]
    fn tpe_converges_to_zf() {
        let h = vec![random_h(4, 64, 92)];
        let g = [1.0; 4];
        let t = tpe(&h, &g, 50, 1.0);
        let o = zf_exact(&h, &g).unwrap();
        let rel = t.mats[0].sub(&o.mats[0]).frob_norm() / o.mats[0].frob_norm();
        assert!(rel < 1e-4, "TPE(50) relative error {rel}");
    }

    #[test]
    fn tpe_equals_iterated_recursion() {
        let h = vec![random_h(3, 12, 93)];
        let g = [1.0, 2.0, 0.5];
        let mu = 0.9;
        let q = 7;
        let t = tpe(&h, &g, q, mu);
        let mut u = zero_order_init(&h, &g, mu);
        for _ in 0..q {
            u = order_recursion_step(&u, &h, &g, mu);
        }
        let rel = t.mats[0].sub(&u.mats[0]).frob_norm() / u.mats[0].frob_norm();
        assert!(rel < 1e-12, "telescoping mismatch {rel}");
    }

    #[test]
    fn recursion_fixed_point_at_zf() {
        let h = vec![random_h(3, 10, 94)];
        let g = [1.0; 3];
        let o = zf_exact(&h, &g).unwrap();
        let stepped = order_recursion_step(&o, &h, &g, 1.0);
        assert!(stepped.mats[0].sub(&o.mats[0]).frob_norm() < 1e-12);
    }

    #[test]
    fn recursion_mu_zero_is_noop() {
        let h = vec![random_h(2, 6, 95)];
        let g = [1.0, 1.0];
        let u = zero_order_init(&h, &g, 1.0);
        let stepped = recursion_step(&u, &h, &g, 0.0);
        assert!(stepped.mats[0].sub(&u.mats[0]).frob_norm() == 0.0);
    }

    #[test]
    fn init_mse_identity_per_realization() {
        // The closed-form initialization MSE is exact algebra per realization.
        let m = 16;
        let p = 3;
        let g = [1.0, 1.0, 1.0];
        let h = vec![random_h(p, m, 96)];
        let mu = 1.0;
        let o = zf_exact(&h, &g).unwrap();

        let scaled = h[0]
            .scale_rows(&g.iter().map(|x| 1.0 / x.sqrt()).collect::<Vec<_>>())
            .mul_own_hermitian()
            .scale_real(1.0 / m as f64);
        let (eigs, _) = crate::numerics::hermitian_eig(&scaled).unwrap();

        let mut u = zero_order_init(&h, &g, mu);
        for q in 0..=12u32 {
            let measured = precoder_mse(&u, &o, &g);
            let theory = init_mse_theory(&eigs, mu, q, m).unwrap();
            let rel = (measured - theory).abs() / theory;
            assert!(rel < 1e-9, "Q={q}: measured {measured} theory {theory} rel {rel}");
            u = order_recursion_step(&u, &h, &g, mu);
        }
    }

    #[test]
    fn time_recursion_equals_order_recursion_static() {
        let h = vec![random_h(2, 8, 97)];
        let g = [1.0, 1.0];
        let mut a = zero_order_init(&h, &g, 1.0);
        let mut b = a.clone();
        for _ in 0..4 {
            a = order_recursion_step(&a, &h, &g, 1.0);
            b = time_recursion_step(&b, &h, &g, 1.0);
        }
        assert_eq!(a.mats[0], b.mats[0]);
    }

    #[test]
    fn step_size_rules() {
        assert_eq!(step_size(&StepSizeRule::Independent).unwrap(), 1.0);
        assert_eq!(
            step_size(&StepSizeRule::IndependentNoisy(0.01)).unwrap(),
            1.01
        );
        let r = CMat::identity(4);
        assert!((step_size(&StepSizeRule::Correlated(&r)).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (step_size(&StepSizeRule::CorrelatedNoisy(&r, 0.5)).unwrap() - 2.0 / 3.0).abs()
                < 1e-12
        );
        assert!(step_size(&StepSizeRule::Manual(0.0)).is_err());
    }

    #[test]
    fn zf_singular_error_identifies_subcarrier() {
        // Duplicate user rows make H H^H rank deficient.
        let mut h = random_h(2, 4, 43);
        for m in 0..4 {
            let v = h[(0, m)];
            h[(1, m)] = v;
        }
        match zf_exact(&[h], &[1.0, 1.0]) {
            Err(Error::Singular { context, .. }) => {
                assert!(context.contains("subcarrier 0"), "{context}");
            }
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn gain_scale_consistency() {
        // Scaling every g_p by a common factor leaves exact ZF untouched,
        // scales U^(0) by the inverse factor, and the recursion still lands
        // on the same fixed point.
        let h = vec![random_h(3, 12, 44)];
        let g1 = [1.0, 1.0, 1.0];
        let g3 = [3.0, 3.0, 3.0];
        let o1 = zf_exact(&h, &g1).unwrap();
        let o3 = zf_exact(&h, &g3).unwrap();
        assert!(o1.mats[0].sub(&o3.mats[0]).frob_norm() < 1e-13);

        let u0_1 = zero_order_init(&h, &g1, 1.0);
        let u0_3 = zero_order_init(&h, &g3, 1.0);
        assert!(
            u0_3.mats[0]
                .scale_real(3.0)
                .sub(&u0_1.mats[0])
                .frob_norm()
                < 1e-13
        );

        let mut u = u0_3;
        for _ in 0..200 {
            u = order_recursion_step(&u, &h, &g3, 1.0);
        }
        let rel = u.mats[0].sub(&o1.mats[0]).frob_norm() / o1.mats[0].frob_norm();
        assert!(rel < 1e-6, "scaled-gain recursion missed ZF: rel {rel}");
    }

    #[test]
    fn monotone_convergence_in_region() {
        let m = 24;
        let p = 3;
        let g = [1.0; 3];
        let h = vec![random_h(p, m, 45)];
        let o = zf_exact(&h, &g).unwrap();
        let scaled = h[0].mul_own_hermitian().scale_real(1.0 / m as f64);
        let (eigs, _) = crate::numerics::hermitian_eig(&scaled).unwrap();
        let mu = 1.0;
        assert!(mu < 2.0 / eigs.last().unwrap(), "draw left the mu region");
        let mut u = zero_order_init(&h, &g, mu);
        let mut last = f64::INFINITY;
        for _ in 0..=25 {
            let err = precoder_mse(&u, &o, &g).sqrt();
            assert!(err <= last * (1.0 + 1e-12), "error increased: {err} > {last}");
            last = err;
            u = order_recursion_step(&u, &h, &g, mu);
        }
    }

    #[test]
    fn single_user_mf_filter_is_conjugate_cir() {
        // u = h*/M per antenna => taps c*[-l]/M on -(L-1)..0.
        let pdp = build_pdp(&PdpProfile::Uniform(4), 7.68e6).unwrap();
        let k = 16;
        let mut rng = RngStream::new(98, 0);
        let f = generate_frame(&pdp, 2, 1, 1, 0.0, 66.7e-6, None, &[1.0], k, &mut rng).unwrap();
        let h = f.block_cfr_mats(0);
        let u = mf(&h, &[1.0]);
        let w = freq_to_filter(&u, &[1.0], 5).unwrap();
        for m in 0..2 {
            let cir = f.cir_at(0, m, 0);
            let taps = w.taps_at(m, 0);
            for (slot, tap) in taps.iter().enumerate() {
                let l = w.shift_at(slot); // -5..5
                let expected = if (-(cir.len() as i64 - 1)..=0).contains(&l) {
                    cir[(-l) as usize].conj() / 2.0
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert!(
                    (tap - expected).norm() < 1e-12,
                    "tap at l={l}: {tap} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn flat_channel_filter_is_single_tap() {
        let pdp = build_pdp(&PdpProfile::SingleTap, 7.68e6).unwrap();
        let mut rng = RngStream::new(99, 0);
        let f = generate_frame(&pdp, 3, 2, 1, 0.0, 66.7e-6, None, &[1.0, 1.0], 16, &mut rng)
            .unwrap();
        let h = f.block_cfr_mats(0);
        let u = zf_exact(&h, &[1.0, 1.0]).unwrap();
        let w = freq_to_filter(&u, &[1.0, 1.0], 4).unwrap();
        for m in 0..3 {
            for p in 0..2 {
                for (slot, tap) in w.taps_at(m, p).iter().enumerate() {
                    if w.shift_at(slot) != 0 {
                        assert!(tap.norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn filter_update_fixed_point_untruncated() {
        let pdp = build_pdp(&PdpProfile::Uniform(3), 7.68e6).unwrap();
        let k = 16;
        let mut rng = RngStream::new(101, 0);
        let f = generate_frame(&pdp, 4, 2, 1, 0.0, 66.7e-6, None, &[1.0, 1.0], k, &mut rng)
            .unwrap();
        let h = f.block_cfr_mats(0);
        let o = zf_exact(&h, &[1.0, 1.0]).unwrap();
        let mut w = freq_to_filter(&o, &[1.0, 1.0], k).unwrap();
        assert!(w.is_full_window());
        let before: Vec<Complex64> = w.taps_at(0, 0).to_vec();
        w.filter_update(&f.block_cir(0), 0).unwrap();
        let e = w.last_error.as_ref().unwrap();
        let enorm: f64 = e.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(enorm < 1e-9, "fixed point error norm {enorm}");
        let after = w.taps_at(0, 0);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn filter_update_first_step_from_zero() {
        // Zero taps, single user, mu = 1: w'[l] = (1/M) g^{-1} c*[-l].
        let pdp = build_pdp(&PdpProfile::Uniform(3), 7.68e6).unwrap();
        let k = 16;
        let antennas = 3;
        let mut rng = RngStream::new(102, 0);
        let f = generate_frame(&pdp, antennas, 1, 1, 0.0, 66.7e-6, None, &[2.0], k, &mut rng)
            .unwrap();
        let zero = FreqPrecoder {
            mats: vec![CMat::zeros(antennas, 1); k],
            mu: 1.0,
            counter: 0,
        };
        let mut w = freq_to_filter(&zero, &[2.0], 4).unwrap();
        w.filter_update(&f.block_cir(0), 0).unwrap();
        for m in 0..antennas {
            let cir = f.cir_at(0, m, 0);
            for (slot, tap) in w.taps_at(m, 0).iter().enumerate() {
                let l = w.shift_at(slot);
                let expected = if (-(cir.len() as i64 - 1)..=0).contains(&l) {
                    cir[(-l) as usize].conj() / (antennas as f64 * 2.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert!((tap - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn filter_converges_on_static_channel_with_truncation() {
        let pdp = build_pdp(&PdpProfile::Uniform(4), 7.68e6).unwrap();
        let k = 64;
        let g = [1.0, 1.0];
        let mut rng = RngStream::new(103, 0);
        let f = generate_frame(&pdp, 16, 2, 1, 0.0, 66.7e-6, None, &g, k, &mut rng).unwrap();
        let h = f.block_cfr_mats(0);
        let init = zero_order_init(&h, &g, 1.0);
        let mut w = freq_to_filter(&init, &g, 4).unwrap();
        for step in 0..40 {
            w.filter_update(&f.block_cir(0), step).unwrap();
        }
        let u = w.to_freq().unwrap();
        for (k_idx, hk) in h.iter().enumerate() {
            let resid = hu_minus_i(hk, &u.mats[k_idx]);
            assert!(resid < 0.05, "subcarrier {k_idx}: residual {resid}");
        }
    }

    #[test]
    fn divergence_guard_fires() {
        let pdp = build_pdp(&PdpProfile::Uniform(2), 7.68e6).unwrap();
        let k = 16;
        let g = [1.0, 1.0];
        let mut rng = RngStream::new(104, 0);
        let f = generate_frame(&pdp, 2, 2, 1, 0.0, 66.7e-6, None, &g, k, &mut rng).unwrap();
        let h = f.block_cfr_mats(0);
        // Step size far beyond 2/lambda_max: the recursion must blow up and
        // the guard must turn that into an error instead of silent NaNs.
        let init = zero_order_init(&h, &g, 50.0);
        let mut w = freq_to_filter(&init, &g, 4).unwrap();
        w.mu = 50.0;
        let mut diverged = false;
        for step in 0..40 {
            match w.filter_update(&f.block_cir(0), step) {
                Ok(()) => {}
                Err(Error::Divergence { .. }) => {
                    diverged = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(diverged, "divergence guard never fired");
    }

    #[test]
    fn precoder_snapshot_roundtrip() {
        let h = vec![random_h(2, 4, 105); 8];
        let u = zf_exact(&h, &[1.0, 1.0]).unwrap();
        let w = freq_to_filter(&u, &[1.0, 1.0], 2).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = ConvPrecoder::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.taps, w.taps);
        assert_eq!(back.half_window, w.half_window);
    }
}
