//! Fading channel generation.
//!
//! Frames carry a tapped-delay-line CIR per (user, antenna, block) and the
//! matching CFR. Spatial correlation across antennas follows the ULA Bessel
//! profile; temporal correlation across OFDM blocks is an exact Gaussian
//! process with the Jakes autocorrelation J0(2 pi fd n T), realized through
//! the Cholesky factor of the block-lag Toeplitz matrix.

use crate::error::{Error, Result};
use crate::numerics::{bessel_j0, cholesky, dft, CMat, Complex64, RngStream};
use std::io::{Read, Write};

/// ETU tapped-delay-line profile from 3GPP TS 36.101 Annex B.2.1 (the LTE
/// fading model family): delays in ns and mean powers in dB.
const ETU_DELAYS_NS: [f64; 9] = [
    0.0, 50.0, 120.0, 200.0, 230.0, 500.0, 1600.0, 2300.0, 5000.0,
];
const ETU_POWERS_DB: [f64; 9] = [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0];

#[derive(Debug, Clone, PartialEq)]
pub enum PdpProfile {
    Etu,
    Uniform(usize),
    SingleTap,
}

impl std::str::FromStr for PdpProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("etu") {
            return Ok(PdpProfile::Etu);
        }
        if s.eq_ignore_ascii_case("single_tap") {
            return Ok(PdpProfile::SingleTap);
        }
        if let Some(rest) = s.strip_prefix("uniform(").and_then(|r| r.strip_suffix(')')) {
            if let Ok(n) = rest.parse::<usize>() {
                if n >= 1 {
                    return Ok(PdpProfile::Uniform(n));
                }
            }
        }
        Err(Error::UnknownProfile(s.to_string()))
    }
}

/// Power delay profile on the sample grid, unit total power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    /// Per-sample tap powers (zeros where no tap lands), length = channel length L.
    pub powers: Vec<f64>,
    pub sample_rate: f64,
}

impl PowerDelayProfile {
    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    /// Restrict to the first `max_len` samples, dropping later taps and
    /// renormalizing to unit power.
    pub fn truncated(&self, max_len: usize) -> Result<PowerDelayProfile> {
        if max_len == 0 {
            return Err(Error::InvalidConfig("channel length must be >= 1".into()));
        }
        let mut powers: Vec<f64> = self.powers.iter().copied().take(max_len).collect();
        let total: f64 = powers.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "channel length {max_len} removes all taps"
            )));
        }
        for v in powers.iter_mut() {
            *v /= total;
        }
        Ok(PowerDelayProfile {
            powers,
            sample_rate: self.sample_rate,
        })
    }
}

/// Map a named profile onto the sample grid (nearest-sample assignment,
/// powers summed on collision) and normalize to unit power.
pub fn build_pdp(profile: &PdpProfile, sample_rate: f64) -> Result<PowerDelayProfile> {
    if !(sample_rate > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let powers = match profile {
        PdpProfile::SingleTap => vec![1.0],
        PdpProfile::Uniform(n) => vec![1.0 / *n as f64; *n],
        PdpProfile::Etu => {
            let mut linear: Vec<(usize, f64)> = Vec::new();
            for (delay_ns, p_db) in ETU_DELAYS_NS.iter().zip(ETU_POWERS_DB.iter()) {
                let idx = (delay_ns * 1e-9 * sample_rate).round() as usize;
                linear.push((idx, 10f64.powf(p_db / 10.0)));
            }
            let last = linear.iter().map(|(i, _)| *i).max().unwrap();
            let mut powers = vec![0.0; last + 1];
            for (i, p) in linear {
                powers[i] += p;
            }
            let total: f64 = powers.iter().sum();
            for v in powers.iter_mut() {
                *v /= total;
            }
            powers
        }
    };
    Ok(PowerDelayProfile {
        powers,
        sample_rate,
    })
}

/// ULA antenna correlation: rho[d] = J0(2 pi d D / (M - 1)) where D is the
/// array size in wavelengths. M = 1 returns [[1]].
pub fn spatial_correlation(m: usize, d: f64) -> CMat {
    assert!(m >= 1);
    if m == 1 {
        return CMat::identity(1);
    }
    CMat::from_fn(m, m, |i, j| {
        let lag = i as f64 - j as f64;
        Complex64::new(bessel_j0(2.0 * std::f64::consts::PI * lag * d / (m - 1) as f64), 0.0)
    })
}

/// One frame of channel realizations.
#[derive(Debug, Clone)]
pub struct ChannelFrame {
    pub users: usize,
    pub antennas: usize,
    pub blocks: usize,
    pub taps: usize,
    pub fft_size: usize,
    pub gains: Vec<f64>,
    pub block_duration: f64,
    pub doppler_hz: f64,
    /// CIR, strides [p][m][n][l].
    cir: Vec<Complex64>,
    /// CFR, strides [p][m][n][k].
    cfr: Vec<Complex64>,
}

impl ChannelFrame {
    #[inline]
    fn cir_base(&self, p: usize, m: usize, n: usize) -> usize {
        ((p * self.antennas + m) * self.blocks + n) * self.taps
    }

    #[inline]
    fn cfr_base(&self, p: usize, m: usize, n: usize) -> usize {
        ((p * self.antennas + m) * self.blocks + n) * self.fft_size
    }

    pub fn cir_at(&self, p: usize, m: usize, n: usize) -> &[Complex64] {
        let b = self.cir_base(p, m, n);
        &self.cir[b..b + self.taps]
    }

    pub fn cfr_at(&self, p: usize, m: usize, n: usize) -> &[Complex64] {
        let b = self.cfr_base(p, m, n);
        &self.cfr[b..b + self.fft_size]
    }

    /// CFR as the P x M matrix H[n, k].
    pub fn cfr_mat(&self, n: usize, k: usize) -> CMat {
        CMat::from_fn(self.users, self.antennas, |p, m| {
            self.cfr[self.cfr_base(p, m, n) + k]
        })
    }

    /// All K per-subcarrier H matrices of one block.
    pub fn block_cfr_mats(&self, n: usize) -> Vec<CMat> {
        (0..self.fft_size).map(|k| self.cfr_mat(n, k)).collect()
    }

    /// CIR of one block as [i][m] tap slices, for the filter update.
    pub fn block_cir(&self, n: usize) -> Vec<Vec<&[Complex64]>> {
        (0..self.users)
            .map(|p| (0..self.antennas).map(|m| self.cir_at(p, m, n)).collect())
            .collect()
    }

    /// Largest |cfr - DFT(cir)| over every (p, m, n, k); the defining
    /// consistency invariant.
    pub fn cir_cfr_consistency(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.users {
            for m in 0..self.antennas {
                for n in 0..self.blocks {
                    let freq = cir_to_cfr(self.cir_at(p, m, n), self.fft_size);
                    let have = self.cfr_at(p, m, n);
                    for (a, b) in freq.iter().zip(have.iter()) {
                        worst = worst.max((a - b).norm());
                    }
                }
            }
        }
        worst
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"LSAF")?;
        for dim in [
            1u32,
            self.users as u32,
            self.antennas as u32,
            self.blocks as u32,
            self.taps as u32,
            self.fft_size as u32,
        ] {
            w.write_all(&dim.to_le_bytes())?;
        }
        w.write_all(&self.block_duration.to_le_bytes())?;
        w.write_all(&self.doppler_hz.to_le_bytes())?;
        for g in &self.gains {
            w.write_all(&g.to_le_bytes())?;
        }
        for v in &self.cir {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ChannelFrame> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"LSAF" {
            return Err(Error::InvalidConfig("bad frame magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::InvalidConfig(format!("bad frame version {version}")));
        }
        let users = read_u32(r)? as usize;
        let antennas = read_u32(r)? as usize;
        let blocks = read_u32(r)? as usize;
        let taps = read_u32(r)? as usize;
        let fft_size = read_u32(r)? as usize;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let block_duration = read_f64(r)?;
        let doppler_hz = read_f64(r)?;
        let gains: Vec<f64> = (0..users)
            .map(|_| read_f64(r))
            .collect::<Result<Vec<_>>>()?;
        let count = users * antennas * blocks * taps;
        let mut cir = Vec::with_capacity(count);
        for _ in 0..count {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            cir.push(Complex64::new(re, im));
        }
        let mut frame = ChannelFrame {
            users,
            antennas,
            blocks,
            taps,
            fft_size,
            gains,
            block_duration,
            doppler_hz,
            cir,
            cfr: Vec::new(),
        };
        frame.recompute_cfr()?;
        Ok(frame)
    }

    fn recompute_cfr(&mut self) -> Result<()> {
        let mut cfr = vec![Complex64::new(0.0, 0.0); self.users * self.antennas * self.blocks * self.fft_size];
        for p in 0..self.users {
            for m in 0..self.antennas {
                for n in 0..self.blocks {
                    let freq = cir_to_cfr(self.cir_at(p, m, n), self.fft_size);
                    let b = self.cfr_base(p, m, n);
                    cfr[b..b + self.fft_size].copy_from_slice(&freq);
                }
            }
        }
        self.cfr = cfr;
        Ok(())
    }
}

/// CFR from CIR: h[k] = sum_l c[l] e^{-j 2 pi l k / K}.
pub fn cir_to_cfr(cir: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut padded = vec![Complex64::new(0.0, 0.0); k];
    padded[..cir.len()].copy_from_slice(cir);
    dft(&padded, k, false).expect("fft size validated at config time")
}

/// Cholesky factor of the block-lag Jakes Toeplitz matrix
/// T[i, j] = J0(2 pi fd (i - j) T).
fn temporal_factor(blocks: usize, fd: f64, block_duration: f64) -> Result<CMat> {
    let t = CMat::from_fn(blocks, blocks, |i, j| {
        let lag = (i as f64 - j as f64) * block_duration;
        Complex64::new(bessel_j0(2.0 * std::f64::consts::PI * fd * lag), 0.0)
    });
    cholesky(&t).map_err(|e| Error::TemporalFactorization {
        fd_hz: fd,
        block_duration,
        detail: e.to_string(),
    })
}

/// Generate one frame.
///
/// For each user p and tap l an M x N i.i.d. complex Gaussian matrix is
/// colored temporally by chol of the Jakes Toeplitz matrix and spatially by
/// chol of R, then scaled by sqrt(g_p * power[l]). The CFR follows by DFT.
/// `spatial` = None means independent antennas (identity R, no coloring);
/// fd = 0 takes an exact static path (one draw replicated across blocks).
#[allow(clippy::too_many_arguments)]
pub fn generate_frame(
    pdp: &PowerDelayProfile,
    antennas: usize,
    users: usize,
    blocks: usize,
    fd: f64,
    block_duration: f64,
    spatial: Option<&CMat>,
    gains: &[f64],
    fft_size: usize,
    rng: &mut RngStream,
) -> Result<ChannelFrame> {
    if blocks < 1 || users < 1 || antennas < 1 {
        return Err(Error::InvalidConfig(
            "antennas, users, blocks must all be >= 1".into(),
        ));
    }
    if gains.len() != users {
        return Err(Error::Dimension {
            context: "generate_frame",
            expected: format!("{users} gains"),
            got: gains.len().to_string(),
        });
    }
    let taps = pdp.len();
    if taps > fft_size {
        return Err(Error::InvalidConfig(format!(
            "channel length {taps} exceeds FFT size {fft_size}"
        )));
    }
    if let Some(r) = spatial {
        if r.rows() != antennas || r.cols() != antennas {
            return Err(Error::Dimension {
                context: "generate_frame",
                expected: format!("{antennas}x{antennas} correlation"),
                got: format!("{}x{}", r.rows(), r.cols()),
            });
        }
    }

    let ls = match spatial {
        Some(r) => Some(cholesky(r)?),
        None => None,
    };
    let lt = if fd != 0.0 && blocks > 1 {
        Some(temporal_factor(blocks, fd, block_duration)?)
    } else {
        None
    };

    let mut cir = vec![Complex64::new(0.0, 0.0); users * antennas * blocks * taps];
    let stride_n = taps;
    let stride_m = blocks * taps;
    let stride_p = antennas * stride_m;

    let mut iid = vec![Complex64::new(0.0, 0.0); antennas * blocks];
    let mut colored = vec![Complex64::new(0.0, 0.0); antennas * blocks];
    for p in 0..users {
        for (l, &power) in pdp.powers.iter().enumerate() {
            if power == 0.0 {
                continue;
            }
            let scale = (gains[p] * power).sqrt();
            match &lt {
                None => {
                    // Static in time: one spatial draw replicated across blocks.
                    for v in iid.iter_mut().take(antennas) {
                        *v = rng.next_complex_gaussian(1.0);
                    }
                    apply_spatial(&ls, &iid[..antennas], &mut colored[..antennas]);
                    for m in 0..antennas {
                        let base = p * stride_p + m * stride_m;
                        let v = colored[m] * scale;
                        for n in 0..blocks {
                            cir[base + n * stride_n + l] = v;
                        }
                    }
                }
                Some(lt) => {
                    for v in iid.iter_mut() {
                        *v = rng.next_complex_gaussian(1.0);
                    }
                    // Temporal coloring: x[m][n] = sum_{b<=n} z[m][b] Lt[n][b].
                    for m in 0..antennas {
                        let z = &iid[m * blocks..(m + 1) * blocks];
                        let x = &mut colored[m * blocks..(m + 1) * blocks];
                        for n in 0..blocks {
                            let mut acc = Complex64::new(0.0, 0.0);
                            for b in 0..=n {
                                acc += z[b] * lt[(n, b)].re;
                            }
                            x[n] = acc;
                        }
                    }
                    // Spatial coloring per block, in place over a scratch column.
                    if let Some(ls) = &ls {
                        let mut col = vec![Complex64::new(0.0, 0.0); antennas];
                        for n in 0..blocks {
                            for m in 0..antennas {
                                col[m] = colored[m * blocks + n];
                            }
                            for m in (0..antennas).rev() {
                                let mut acc = Complex64::new(0.0, 0.0);
                                for a in 0..=m {
                                    acc += ls[(m, a)] * col[a];
                                }
                                colored[m * blocks + n] = acc;
                            }
                        }
                    }
                    for m in 0..antennas {
                        let base = p * stride_p + m * stride_m;
                        for n in 0..blocks {
                            cir[base + n * stride_n + l] = colored[m * blocks + n] * scale;
                        }
                    }
                }
            }
        }
    }

    let mut frame = ChannelFrame {
        users,
        antennas,
        blocks,
        taps,
        fft_size,
        gains: gains.to_vec(),
        block_duration,
        doppler_hz: fd,
        cir,
        cfr: Vec::new(),
    };
    frame.recompute_cfr()?;
    Ok(frame)
}

fn apply_spatial(ls: &Option<CMat>, z: &[Complex64], out: &mut [Complex64]) {
    match ls {
        None => out.copy_from_slice(z),
        Some(l) => {
            for m in (0..z.len()).rev() {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..=m {
                    acc += l[(m, a)] * z[a];
                }
                out[m] = acc;
            }
        }
    }
}

/// Frame with channel-estimation error injected.
#[derive(Debug, Clone)]
pub struct NoisyChannelFrame {
    /// The imperfect channel hhat = h + htilde, itself an L-tap frame.
    pub hat: ChannelFrame,
    pub sigma_h2: f64,
}

/// Add estimation error in the tap domain: L i.i.d. complex Gaussians per
/// (user, antenna, block) of variance g_p * sigma_h2 / L each, so hhat stays
/// an L-tap channel and per-subcarrier error statistics are CN(0, g_p sigma_h2).
pub fn inject_estimation_error(
    frame: &ChannelFrame,
    sigma_h2: f64,
    rng: &mut RngStream,
) -> Result<NoisyChannelFrame> {
    if sigma_h2 < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "sigma_h2 must be >= 0, got {sigma_h2}"
        )));
    }
    let mut hat = frame.clone();
    if sigma_h2 == 0.0 {
        return Ok(NoisyChannelFrame { hat, sigma_h2 });
    }
    let taps = frame.taps;
    for p in 0..frame.users {
        let var = frame.gains[p] * sigma_h2 / taps as f64;
        for m in 0..frame.antennas {
            for n in 0..frame.blocks {
                let b = hat.cir_base(p, m, n);
                for l in 0..taps {
                    hat.cir[b + l] += rng.next_complex_gaussian(var);
                }
            }
        }
    }
    hat.recompute_cfr()?;
    Ok(NoisyChannelFrame { hat, sigma_h2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 7.68e6; // 512 * 15 kHz

    #[test]
    fn single_tap_profile() {
        let pdp = build_pdp(&PdpProfile::SingleTap, FS).unwrap();
        assert_eq!(pdp.powers, vec![1.0]);
    }

    #[test]
    fn uniform_profile() {
        let pdp = build_pdp(&PdpProfile::Uniform(4), FS).unwrap();
        assert_eq!(pdp.len(), 4);
        for p in &pdp.powers {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn etu_spans_39_samples_at_lte_rate() {
        let pdp = build_pdp(&PdpProfile::Etu, FS).unwrap();
        assert_eq!(pdp.len(), 39);
        let total: f64 = pdp.powers.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Override to the channel length the complexity figures use.
        let short = pdp.truncated(38).unwrap();
        assert_eq!(short.len(), 38);
        assert!((short.powers.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_profile_rejected() {
        assert!("epa".parse::<PdpProfile>().is_err());
        assert!("uniform(0)".parse::<PdpProfile>().is_err());
        assert_eq!("uniform(4)".parse::<PdpProfile>().unwrap(), PdpProfile::Uniform(4));
    }

    #[test]
    fn spatial_correlation_shapes() {
        let r = spatial_correlation(1, 0.5);
        assert_eq!(r.rows(), 1);
        assert!((r[(0, 0)].re - 1.0).abs() < 1e-15);

        // D = 0: fully correlated, all ones.
        let r0 = spatial_correlation(4, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                assert!((r0[(i, j)].re - 1.0).abs() < 1e-15);
            }
        }

        // 2 pi D = first J0 zero: adjacent antennas decorrelated.
        let d = 2.404825557695773 / (2.0 * std::f64::consts::PI);
        let r2 = spatial_correlation(2, d);
        assert!(r2[(0, 1)].re.abs() < 1e-9);
        assert!((r2[(0, 0)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn static_frame_identical_blocks() {
        let pdp = build_pdp(&PdpProfile::Uniform(3), FS).unwrap();
        let mut rng = RngStream::new(5, 0);
        let f = generate_frame(&pdp, 4, 2, 6, 0.0, 66.7e-6, None, &[1.0, 1.0], 16, &mut rng).unwrap();
        for p in 0..2 {
            for m in 0..4 {
                let first = f.cir_at(p, m, 0).to_vec();
                for n in 1..6 {
                    assert_eq!(f.cir_at(p, m, n), &first[..]);
                }
            }
        }
    }

    #[test]
    fn cir_cfr_consistency_invariant() {
        let pdp = build_pdp(&PdpProfile::Etu, FS).unwrap();
        let mut rng = RngStream::new(9, 0);
        let f = generate_frame(
            &pdp, 3, 2, 4, 70.0, 66.7e-6, None, &[1.0, 0.5], 64, &mut rng,
        )
        .unwrap();
        assert!(f.cir_cfr_consistency() < 1e-10);
    }

    #[test]
    fn doppler_lag1_correlation_matches_j0() {
        // Ensemble estimate of the block-lag-1 autocorrelation of a tap.
        let pdp = build_pdp(&PdpProfile::SingleTap, FS).unwrap();
        let fd_t = 0.01;
        let t = 66.7e-6;
        let fd = fd_t / t;
        let frames = 2000;
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0f64;
        for trial in 0..frames {
            let mut rng = RngStream::for_trial(11, trial, 0);
            let f = generate_frame(&pdp, 1, 1, 2, fd, t, None, &[1.0], 2, &mut rng).unwrap();
            let a = f.cir_at(0, 0, 0)[0];
            let b = f.cir_at(0, 0, 1)[0];
            num += a * b.conj();
            den += 0.5 * (a.norm_sqr() + b.norm_sqr());
        }
        let measured = (num / den).re;
        let expected = bessel_j0(2.0 * std::f64::consts::PI * fd_t);
        assert!(
            (measured - expected).abs() < 0.01,
            "lag-1 correlation {measured} vs J0 {expected}"
        );
    }

    #[test]
    fn unit_power_per_subcarrier() {
        let pdp = build_pdp(&PdpProfile::Uniform(4), FS).unwrap();
        let frames = 2000;
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for trial in 0..frames {
            let mut rng = RngStream::for_trial(13, trial, 0);
            let f = generate_frame(&pdp, 2, 1, 1, 0.0, 66.7e-6, None, &[1.0], 8, &mut rng).unwrap();
            for m in 0..2 {
                for k in 0..8 {
                    acc += f.cfr_at(0, m, 0)[k].norm_sqr();
                    count += 1;
                }
            }
        }
        let var = acc / count as f64;
        assert!((0.97..=1.03).contains(&var), "per-subcarrier variance {var}");
    }

    #[test]
    fn cross_user_independence() {
        let pdp = build_pdp(&PdpProfile::SingleTap, FS).unwrap();
        let frames = 2000;
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0f64;
        for trial in 0..frames {
            let mut rng = RngStream::for_trial(17, trial, 0);
            let f = generate_frame(&pdp, 1, 2, 1, 0.0, 66.7e-6, None, &[1.0, 1.0], 2, &mut rng).unwrap();
            let a = f.cfr_at(0, 0, 0)[0];
            let b = f.cfr_at(1, 0, 0)[0];
            num += a * b.conj();
            den += 0.5 * (a.norm_sqr() + b.norm_sqr());
        }
        assert!((num / den).norm() < 0.02);
    }

    #[test]
    fn spatial_sample_correlation_matches_rho() {
        let pdp = build_pdp(&PdpProfile::SingleTap, FS).unwrap();
        let d = 1.0;
        let r = spatial_correlation(3, d);
        let frames = 2000;
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0f64;
        for trial in 0..frames {
            let mut rng = RngStream::for_trial(19, trial, 0);
            let f =
                generate_frame(&pdp, 3, 1, 1, 0.0, 66.7e-6, Some(&r), &[1.0], 2, &mut rng).unwrap();
            let a = f.cfr_at(0, 0, 0)[0];
            let b = f.cfr_at(0, 1, 0)[0];
            num += a * b.conj();
            den += 0.5 * (a.norm_sqr() + b.norm_sqr());
        }
        let measured = (num / den).re;
        let expected = r[(0, 1)].re;
        assert!(
            (measured - expected).abs() < 0.02,
            "spatial correlation {measured} vs rho {expected}"
        );
    }

    #[test]
    fn estimation_error_statistics() {
        let pdp = build_pdp(&PdpProfile::Uniform(4), FS).unwrap();
        let sigma = 0.01;
        let mut acc = 0.0f64;
        let mut count = 0usize;
        let trials = 8000; // 8000 x 128 > 1e6 error samples
        for trial in 0..trials {
            let mut rng = RngStream::for_trial(23, trial, 0);
            let f = generate_frame(&pdp, 4, 2, 1, 0.0, 66.7e-6, None, &[1.0, 1.0], 16, &mut rng).unwrap();
            let mut erng = RngStream::for_trial(23, trial, 1);
            let noisy = inject_estimation_error(&f, sigma, &mut erng).unwrap();
            for p in 0..2 {
                for m in 0..4 {
                    for k in 0..16 {
                        let d = noisy.hat.cfr_at(p, m, 0)[k] - f.cfr_at(p, m, 0)[k];
                        acc += d.norm_sqr();
                        count += 1;
                    }
                }
            }
        }
        let var = acc / count as f64;
        assert!(
            (0.0095..=0.0105).contains(&var),
            "estimation error variance {var}"
        );
    }

    #[test]
    fn identity_correlation_equals_independent_mode() {
        // R = I consumes the same draws and produces the same frame as the
        // no-correlation path.
        let pdp = build_pdp(&PdpProfile::Uniform(2), FS).unwrap();
        let r = CMat::identity(3);
        let mut rng_a = RngStream::new(35, 0);
        let a = generate_frame(&pdp, 3, 1, 2, 90.0, 66.7e-6, None, &[1.0], 8, &mut rng_a).unwrap();
        let mut rng_b = RngStream::new(35, 0);
        let b =
            generate_frame(&pdp, 3, 1, 2, 90.0, 66.7e-6, Some(&r), &[1.0], 8, &mut rng_b).unwrap();
        for p in 0..1 {
            for m in 0..3 {
                for n in 0..2 {
                    let (x, y) = (a.cir_at(p, m, n), b.cir_at(p, m, n));
                    for (u, v) in x.iter().zip(y.iter()) {
                        assert!((u - v).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn estimation_error_shifts_gram_eigenvalues() {
        // Mean eigenvalues of (1/M) Hhat Hhat^H move up by sigma_h^2 when the
        // antenna count is large.
        use crate::numerics::hermitian_eig;
        let (m, p) = (400usize, 4usize);
        let sigma = 0.1;
        let pdp = build_pdp(&PdpProfile::SingleTap, 1.0).unwrap();
        let trials = 300u64;
        let mut clean_mean = vec![0.0f64; p];
        let mut noisy_mean = vec![0.0f64; p];
        for trial in 0..trials {
            let mut rng = RngStream::for_trial(37, trial, 0);
            let f = generate_frame(&pdp, m, p, 1, 0.0, 1.0, None, &[1.0; 4], 2, &mut rng).unwrap();
            let mut erng = RngStream::for_trial(37, trial, 1);
            let noisy = inject_estimation_error(&f, sigma, &mut erng).unwrap();
            let gram = f.cfr_mat(0, 0).mul_own_hermitian().scale_real(1.0 / m as f64);
            let gram_hat = noisy
                .hat
                .cfr_mat(0, 0)
                .mul_own_hermitian()
                .scale_real(1.0 / m as f64);
            let (ev, _) = hermitian_eig(&gram).unwrap();
            let (ev_hat, _) = hermitian_eig(&gram_hat).unwrap();
            for i in 0..p {
                clean_mean[i] += ev[i];
                noisy_mean[i] += ev_hat[i];
            }
        }
        for i in 0..p {
            let expected = clean_mean[i] / trials as f64 + sigma;
            let got = noisy_mean[i] / trials as f64;
            let rel = (got - expected).abs() / got;
            assert!(
                rel < 0.05,
                "eigenvalue {i}: {got:.4} vs shifted {expected:.4} (rel {rel:.3})"
            );
        }
    }

    #[test]
    fn zero_sigma_is_exact_copy() {
        let pdp = build_pdp(&PdpProfile::Uniform(2), FS).unwrap();
        let mut rng = RngStream::new(29, 0);
        let f = generate_frame(&pdp, 2, 1, 2, 0.0, 66.7e-6, None, &[1.0], 8, &mut rng).unwrap();
        let mut erng = RngStream::new(29, 1);
        let noisy = inject_estimation_error(&f, 0.0, &mut erng).unwrap();
        assert_eq!(noisy.hat.cfr_at(0, 1, 1), f.cfr_at(0, 1, 1));
    }

    #[test]
    fn frame_dump_roundtrip() {
        let pdp = build_pdp(&PdpProfile::Uniform(3), FS).unwrap();
        let mut rng = RngStream::new(33, 0);
        let f = generate_frame(&pdp, 2, 2, 3, 40.0, 66.7e-6, None, &[1.0, 2.0], 16, &mut rng).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = ChannelFrame::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.cir, f.cir);
        assert_eq!(back.cfr, f.cfr);
        assert_eq!(back.gains, f.gains);
    }
}
