//! End-to-end OFDM downlink chain.
//!
//! QPSK mapping, per-user or per-antenna OFDM modulation, convolutional or
//! frequency-domain precoding, cyclic prefix, block-fading propagation, AWGN,
//! demodulation, and hard detection. Transform invocations and filter-tap
//! applications are counted for the complexity audit.

use crate::channel::{generate_frame, inject_estimation_error, ChannelFrame, PowerDelayProfile};
use crate::error::{Error, Result};
use crate::metrics::precoder_mse_block;
use crate::numerics::{dft, CMat, Complex64, RngStream};
use crate::precoder::{
    freq_to_filter, time_recursion_step, zero_order_init, zf_exact, zf_exact_one, zf_shared, mf,
    tpe, ConvPrecoder, FreqPrecoder,
};

/// OFDM numerology: FFT size, active subcarrier set, CP length, spacing.
#[derive(Debug, Clone)]
pub struct Numerology {
    pub fft_size: usize,
    pub cp_len: usize,
    /// Data-bearing subcarrier indices: split symmetrically around DC, which
    /// stays unused; the rest of the band is guard.
    pub active: Vec<usize>,
    pub subcarrier_spacing: f64,
    pub blocks_per_frame: usize,
}

impl Numerology {
    pub fn new(
        fft_size: usize,
        active_count: usize,
        cp_len: usize,
        subcarrier_spacing: f64,
        blocks_per_frame: usize,
    ) -> Result<Self> {
        if !fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "FFT size must be a power of two, got {fft_size}"
            )));
        }
        if active_count == 0 || active_count % 2 != 0 || active_count >= fft_size {
            return Err(Error::InvalidConfig(format!(
                "active subcarrier count must be even and below the FFT size, got {active_count}"
            )));
        }
        let half = active_count / 2;
        let mut active: Vec<usize> = (1..=half).collect();
        active.extend((fft_size - half)..fft_size);
        Ok(Numerology {
            fft_size,
            cp_len,
            active,
            subcarrier_spacing,
            blocks_per_frame,
        })
    }

    /// OFDM symbol duration T = 1/df, the T of the tracking analysis.
    pub fn block_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    pub fn sample_rate(&self) -> f64 {
        self.fft_size as f64 * self.subcarrier_spacing
    }
}

// ---------------------------------------------------------------------------
// QPSK
// ---------------------------------------------------------------------------

/// Gray-mapped QPSK: bit pair (b0, b1) -> (I, Q) with 0 -> +sqrt(Es/2) and
/// 1 -> -sqrt(Es/2), so 00 maps to the first quadrant.
pub fn qpsk_map(bits: &[bool], es: f64) -> Vec<Complex64> {
    assert!(bits.len() % 2 == 0, "bit count must be even");
    let a = (es / 2.0).sqrt();
    bits.chunks_exact(2)
        .map(|b| {
            Complex64::new(
                if b[0] { -a } else { a },
                if b[1] { -a } else { a },
            )
        })
        .collect()
}

/// Hard decision by quadrant.
pub fn qpsk_detect(symbols: &[Complex64]) -> Vec<bool> {
    let mut bits = Vec::with_capacity(symbols.len() * 2);
    for s in symbols {
        bits.push(s.re < 0.0);
        bits.push(s.im < 0.0);
    }
    bits
}

// ---------------------------------------------------------------------------
// Operation audit
// ---------------------------------------------------------------------------

/// Measured operation counts from instrumented transmit calls.
///
/// `transform_calls` counts OFDM modulation transforms exactly (one per user
/// for convolutional precoding, one per antenna for frequency-domain
/// precoding). `tap_applications` counts filter coefficients applied per
/// block, i.e. one per (antenna, user, tap) triple, matching the per-block
/// convention of the complexity table. `precode_mults` counts per-subcarrier
/// precoding multiplies of the frequency-domain path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpsAudit {
    pub transform_calls: u64,
    pub tap_applications: u64,
    pub precode_mults: u64,
}

// ---------------------------------------------------------------------------
// Transmitters
// ---------------------------------------------------------------------------

/// s[l] = (1/sqrt(K)) sum_k X[k] e^{+j 2 pi k l / K}.
fn ofdm_modulate(freq: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
    let mut time = dft(freq, k, true)?;
    let scale = (k as f64).sqrt();
    for v in time.iter_mut() {
        *v *= scale;
    }
    Ok(time)
}

/// X[k] = (1/sqrt(K)) sum_l s[l] e^{-j 2 pi k l / K}.
fn ofdm_demodulate(time: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
    let mut freq = dft(time, k, false)?;
    let scale = 1.0 / (k as f64).sqrt();
    for v in freq.iter_mut() {
        *v *= scale;
    }
    Ok(freq)
}

fn prepend_cp(block: &[Complex64], cp: usize) -> Vec<Complex64> {
    let k = block.len();
    let mut out = Vec::with_capacity(cp + k);
    out.extend_from_slice(&block[k - cp..]);
    out.extend_from_slice(block);
    out
}

/// Frequency-domain precoding: per-antenna subcarrier combining, then one
/// OFDM modulation per antenna (M transforms) and a CP.
pub fn transmit_freq(
    x_users: &[Vec<Complex64>],
    u: &FreqPrecoder,
    num: &Numerology,
    audit: &mut OpsAudit,
) -> Result<Vec<Vec<Complex64>>> {
    let k = num.fft_size;
    if u.subcarriers() != k {
        return Err(Error::Dimension {
            context: "transmit_freq",
            expected: format!("{k} subcarriers"),
            got: u.subcarriers().to_string(),
        });
    }
    let antennas = u.mats[0].rows();
    let users = u.mats[0].cols();
    check_user_data(x_users, users, num)?;

    let mut out = Vec::with_capacity(antennas);
    let mut freq = vec![Complex64::new(0.0, 0.0); k];
    for m in 0..antennas {
        freq.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (a, &kk) in num.active.iter().enumerate() {
            let mat = &u.mats[kk];
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, xp) in x_users.iter().enumerate() {
                acc += mat[(m, p)] * xp[a];
            }
            freq[kk] = acc;
        }
        audit.precode_mults += (users * num.active.len()) as u64;
        let time = ofdm_modulate(&freq, k)?;
        audit.transform_calls += 1;
        out.push(prepend_cp(&time, num.cp_len));
    }
    Ok(out)
}

/// Convolutional precoding: one OFDM modulation per user (P transforms), then
/// each antenna circularly convolves the user signals with its filter taps.
/// The circular extension of the block is realized by modulo-K indexing.
pub fn transmit_conv(
    x_users: &[Vec<Complex64>],
    w: &ConvPrecoder,
    num: &Numerology,
    audit: &mut OpsAudit,
) -> Result<Vec<Vec<Complex64>>> {
    let k = num.fft_size;
    if w.fft_size != k {
        return Err(Error::Dimension {
            context: "transmit_conv",
            expected: format!("filter over {k} samples"),
            got: w.fft_size.to_string(),
        });
    }
    check_user_data(x_users, w.users, num)?;

    // One IFFT per user.
    let mut user_time = Vec::with_capacity(w.users);
    let mut freq = vec![Complex64::new(0.0, 0.0); k];
    for xp in x_users {
        freq.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (a, &kk) in num.active.iter().enumerate() {
            freq[kk] = xp[a];
        }
        user_time.push(ofdm_modulate(&freq, k)?);
        audit.transform_calls += 1;
    }

    let win = w.win_len();
    let mut out = Vec::with_capacity(w.antennas);
    for m in 0..w.antennas {
        let mut s = vec![Complex64::new(0.0, 0.0); k];
        for (p, a) in user_time.iter().enumerate() {
            let taps = w.taps_at(m, p);
            for (slot, tap) in taps.iter().enumerate() {
                if tap.re == 0.0 && tap.im == 0.0 {
                    continue;
                }
                let sh = w.shift_at(slot).rem_euclid(k as i64) as usize;
                // s[l] += tap * a[(l - sh) mod K], split at the wrap point.
                for l in 0..sh {
                    s[l] += tap * a[k - sh + l];
                }
                for l in sh..k {
                    s[l] += tap * a[l - sh];
                }
            }
        }
        audit.tap_applications += (w.users * win) as u64;
        out.push(prepend_cp(&s, num.cp_len));
    }
    Ok(out)
}

fn check_user_data(x_users: &[Vec<Complex64>], users: usize, num: &Numerology) -> Result<()> {
    if x_users.len() != users || x_users.iter().any(|x| x.len() != num.active.len()) {
        return Err(Error::Dimension {
            context: "transmit",
            expected: format!("{} users x {} active symbols", users, num.active.len()),
            got: format!(
                "{} users x {} symbols",
                x_users.len(),
                x_users.first().map_or(0, |x| x.len())
            ),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

/// Frequency-domain propagation for block `n`:
/// y_p[k] = sum_m h_{p,m}[n,k] S_m[k] + z, z ~ CN(0, N0), on active
/// subcarriers. The transmit blocks carry their CP, which is stripped here.
pub fn propagate(
    tx: &[Vec<Complex64>],
    frame: &ChannelFrame,
    n: usize,
    n0: f64,
    noise: Option<&mut RngStream>,
    num: &Numerology,
) -> Result<Vec<Vec<Complex64>>> {
    let k = num.fft_size;
    if tx.len() != frame.antennas {
        return Err(Error::Dimension {
            context: "propagate",
            expected: format!("{} antenna streams", frame.antennas),
            got: tx.len().to_string(),
        });
    }
    let mut spectra = Vec::with_capacity(frame.antennas);
    for s in tx {
        spectra.push(ofdm_demodulate(&s[num.cp_len..num.cp_len + k], k)?);
    }
    let mut out = Vec::with_capacity(frame.users);
    for p in 0..frame.users {
        let mut yp = Vec::with_capacity(num.active.len());
        for &kk in &num.active {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, sm) in spectra.iter().enumerate() {
                acc += frame.cfr_at(p, m, n)[kk] * sm[kk];
            }
            yp.push(acc);
        }
        out.push(yp);
    }
    if n0 > 0.0 {
        let rng = noise.expect("noise rng required when N0 > 0");
        for yp in out.iter_mut() {
            for y in yp.iter_mut() {
                *y += rng.next_complex_gaussian(n0);
            }
        }
    }
    Ok(out)
}

/// Time-domain propagation oracle over a whole frame: linear per-block tap
/// convolution with overlap-add across block boundaries, CP removal, then
/// demodulation. Noiseless. Matches [`propagate`] whenever CP >= L - 1; with a
/// short CP the spill from one block lands in the next block's samples.
pub fn propagate_time_oracle(
    tx_blocks: &[Vec<Vec<Complex64>>],
    frame: &ChannelFrame,
    num: &Numerology,
) -> Result<Vec<Vec<Vec<Complex64>>>> {
    let k = num.fft_size;
    let blk = num.cp_len + k;
    let n_blocks = tx_blocks.len();
    let total = n_blocks * blk + frame.taps;
    let mut out = Vec::with_capacity(n_blocks);

    // Received stream per user.
    let mut rx = vec![vec![Complex64::new(0.0, 0.0); total]; frame.users];
    for (n, tx) in tx_blocks.iter().enumerate() {
        let start = n * blk;
        for p in 0..frame.users {
            for (m, sm) in tx.iter().enumerate() {
                let cir = frame.cir_at(p, m, n);
                for (t, s) in sm.iter().enumerate() {
                    if s.re == 0.0 && s.im == 0.0 {
                        continue;
                    }
                    for (l, c) in cir.iter().enumerate() {
                        rx[p][start + t + l] += s * c;
                    }
                }
            }
        }
    }

    for n in 0..n_blocks {
        let start = n * blk + num.cp_len;
        let mut per_user = Vec::with_capacity(frame.users);
        for rp in rx.iter() {
            let freq = ofdm_demodulate(&rp[start..start + k], k)?;
            per_user.push(num.active.iter().map(|&kk| freq[kk]).collect::<Vec<_>>());
        }
        out.push(per_user);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Frame runner
// ---------------------------------------------------------------------------

/// Which precoder drives a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ApproachSpec {
    Proposed {
        init: InitMode,
        half_window: usize,
        reinit_period: Option<usize>,
    },
    ZfShared { b: usize },
    Mf,
    Tpe { q: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    OrderRecursion(u32),
    Oracle,
}

/// Everything one Monte-Carlo frame needs.
#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub antennas: usize,
    pub users: usize,
    pub numerology: Numerology,
    pub pdp: PowerDelayProfile,
    pub fd_hz: f64,
    /// Antenna correlation; `None` means independent antennas.
    pub spatial: Option<CMat>,
    pub gains: Vec<f64>,
    pub sigma_h2: f64,
    /// Operating point for transmission/detection; `None` skips the link
    /// chain entirely (precoder-MSE-only runs).
    pub esn0_db: Option<f64>,
    pub approach: ApproachSpec,
    pub mu: f64,
    pub seed: u64,
    /// Subcarriers at which the precoder MSE is measured (empty: skip).
    pub mse_subcarriers: Vec<usize>,
}

/// Per-block measurements from one frame.
#[derive(Debug, Clone, Default)]
pub struct BlockStats {
    pub mse_measured: Option<f64>,
    pub ser_num: u64,
    pub ser_den: u64,
}

#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub blocks: Vec<BlockStats>,
    pub audit: OpsAudit,
}

/// RNG purpose slots within a trial.
pub mod streams {
    pub const CHANNEL: u64 = 0;
    pub const EST_ERROR: u64 = 1;
    pub const DATA: u64 = 2;
    pub const NOISE: u64 = 3;
}

const ES: f64 = 1.0;

/// Run one Monte-Carlo frame: generate the channel, initialize the precoder,
/// track across blocks, transmit/detect when an operating point is set, and
/// measure the precoder MSE against per-block exact ZF on the true channel.
pub fn run_frame(spec: &FrameSpec, trial: u64) -> Result<FrameOutcome> {
    let num = &spec.numerology;
    let n_blocks = num.blocks_per_frame;
    let mut channel_rng = RngStream::for_trial(spec.seed, trial, streams::CHANNEL);
    let frame = generate_frame(
        &spec.pdp,
        spec.antennas,
        spec.users,
        n_blocks,
        spec.fd_hz,
        num.block_duration(),
        spec.spatial.as_ref(),
        &spec.gains,
        num.fft_size,
        &mut channel_rng,
    )?;

    // The precoder sees the estimated channel; propagation uses the true one.
    let est_frame: ChannelFrame = if spec.sigma_h2 > 0.0 {
        let mut err_rng = RngStream::for_trial(spec.seed, trial, streams::EST_ERROR);
        inject_estimation_error(&frame, spec.sigma_h2, &mut err_rng)?.hat
    } else {
        frame.clone()
    };

    let mut data_rng = RngStream::for_trial(spec.seed, trial, streams::DATA);
    let mut noise_rng = RngStream::for_trial(spec.seed, trial, streams::NOISE);

    let mut audit = OpsAudit::default();
    let mut blocks = Vec::with_capacity(n_blocks);

    let static_channel = spec.fd_hz == 0.0;
    // Baseline precoders on a static channel are identical across blocks.
    let mut cached_freq: Option<FreqPrecoder> = None;
    let mut conv: Option<ConvPrecoder> = None;

    for n in 0..n_blocks {
        // --- precoder for this block ---
        let needs_est_mats = match &spec.approach {
            ApproachSpec::Proposed { .. } => true,
            _ => !(static_channel && cached_freq.is_some()),
        };
        let est_mats = if needs_est_mats {
            Some(est_frame.block_cfr_mats(n))
        } else {
            None
        };

        enum Active<'a> {
            Freq(&'a FreqPrecoder),
            Conv(&'a ConvPrecoder),
        }

        match &spec.approach {
            ApproachSpec::Proposed {
                init,
                half_window,
                reinit_period,
            } => {
                let reinit = match reinit_period {
                    Some(r) => *r > 0 && n % r == 0,
                    None => n == 0,
                };
                if reinit {
                    let h = est_mats.as_ref().unwrap();
                    let u = match init {
                        InitMode::Oracle => zf_exact(h, &spec.gains)?,
                        InitMode::OrderRecursion(q) => {
                            let mut u = zero_order_init(h, &spec.gains, spec.mu);
                            for _ in 0..*q {
                                u = time_recursion_step(&u, h, &spec.gains, spec.mu);
                            }
                            u
                        }
                    };
                    let mut w = freq_to_filter(&u, &spec.gains, *half_window)?;
                    w.mu = spec.mu;
                    conv = Some(w);
                }
            }
            ApproachSpec::ZfShared { b } => {
                if cached_freq.is_none() || !static_channel {
                    cached_freq = Some(zf_shared(est_mats.as_ref().unwrap(), &spec.gains, *b)?);
                }
            }
            ApproachSpec::Mf => {
                if cached_freq.is_none() || !static_channel {
                    cached_freq = Some(mf(est_mats.as_ref().unwrap(), &spec.gains));
                }
            }
            ApproachSpec::Tpe { q } => {
                if cached_freq.is_none() || !static_channel {
                    cached_freq = Some(tpe(est_mats.as_ref().unwrap(), &spec.gains, *q, spec.mu));
                }
            }
        }

        let active = match &spec.approach {
            ApproachSpec::Proposed { .. } => Active::Conv(conv.as_ref().unwrap()),
            _ => Active::Freq(cached_freq.as_ref().unwrap()),
        };

        // --- precoder MSE against exact ZF on the true channel ---
        let mse_measured = if spec.mse_subcarriers.is_empty() {
            None
        } else {
            let mut acc = 0.0;
            for &kk in &spec.mse_subcarriers {
                let h_true = frame.cfr_mat(n, kk);
                let u_o = zf_exact_one(&h_true, kk)?;
                let u_now = match &active {
                    Active::Freq(f) => f.mats[kk].clone(),
                    Active::Conv(w) => w.freq_response_at(kk),
                };
                acc += precoder_mse_block(&u_now, &u_o, &spec.gains);
            }
            Some(acc / spec.mse_subcarriers.len() as f64)
        };

        // --- transmit / propagate / detect ---
        let (ser_num, ser_den) = if let Some(esn0_db) = spec.esn0_db {
            let n0 = ES / 10f64.powf(esn0_db / 10.0);
            let n_data = num.active.len();
            let mut bits: Vec<Vec<bool>> = Vec::with_capacity(spec.users);
            let mut syms: Vec<Vec<Complex64>> = Vec::with_capacity(spec.users);
            for _ in 0..spec.users {
                let b: Vec<bool> = (0..2 * n_data).map(|_| data_rng.next_f64() < 0.5).collect();
                syms.push(qpsk_map(&b, ES));
                bits.push(b);
            }
            let tx = match &active {
                Active::Freq(f) => transmit_freq(&syms, f, num, &mut audit)?,
                Active::Conv(w) => transmit_conv(&syms, w, num, &mut audit)?,
            };
            let rx = propagate(&tx, &frame, n, n0, Some(&mut noise_rng), num)?;
            let mut errs = 0u64;
            for (p, yp) in rx.iter().enumerate() {
                let detected = qpsk_detect(yp);
                for (s, pair) in detected.chunks_exact(2).enumerate() {
                    if pair[0] != bits[p][2 * s] || pair[1] != bits[p][2 * s + 1] {
                        errs += 1;
                    }
                }
            }
            (errs, (spec.users * n_data) as u64)
        } else {
            (0, 0)
        };

        blocks.push(BlockStats {
            mse_measured,
            ser_num,
            ser_den,
        });

        // --- time recursion: update taps with this block's estimated CIR ---
        if let ApproachSpec::Proposed { .. } = &spec.approach {
            if n + 1 < n_blocks {
                let w = conv.as_mut().unwrap();
                let cir = est_frame.block_cir(n);
                w.filter_update(&cir, n)?;
            }
        }
    }

    Ok(FrameOutcome { blocks, audit })
}

impl ConvPrecoder {
    /// Frequency response at one subcarrier without a full transform:
    /// U[k](m,p) = sum_w tap e^{-j 2 pi k shift(w) / K}.
    pub fn freq_response_at(&self, k_idx: usize) -> CMat {
        let k = self.fft_size;
        let win = self.win_len();
        let mut phases = Vec::with_capacity(win);
        for w in 0..win {
            let ang = -2.0 * std::f64::consts::PI * (k_idx as f64) * (self.shift_at(w) as f64)
                / k as f64;
            phases.push(Complex64::new(ang.cos(), ang.sin()));
        }
        CMat::from_fn(self.antennas, self.users, |m, p| {
            self.taps_at(m, p)
                .iter()
                .zip(phases.iter())
                .map(|(t, ph)| t * ph)
                .sum()
        })
    }
}
