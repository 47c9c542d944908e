//! Link-level simulator and numerics library for large-scale-antenna (massive
//! MIMO) OFDM downlink precoding.
//!
//! The centerpiece is a recursive convolutional precoder: zero-forcing
//! precoding implemented as a short time-domain FIR filter per
//! (antenna, user) pair, with the filter coefficients updated by a recursion
//! that avoids any matrix inversion. One IFFT per user replaces one IFFT per
//! antenna. Baselines (exact ZF, subcarrier-shared ZF, matched filter,
//! truncated polynomial expansion), fading/Doppler/estimation-error channel
//! models, closed-form MSE oracles, and complexity accounting are included so
//! the precoder can be validated end to end.
//!
//! Module map:
//! - [`numerics`]: complex matrices, DFT, Jacobi eigensolver, Cholesky,
//!   Bessel J0, counter-based seeded RNG.
//! - [`channel`]: tapped-delay-line fading frames with spatial (ULA) and
//!   temporal (Jakes/Doppler) correlation, plus estimation-error injection.
//! - [`precoder`]: ZF / MF / TPE constructions, the order/time recursion, and
//!   the truncated convolutional filter with its recursive update.
//! - [`link`]: QPSK OFDM downlink chain (modulation, precoding, propagation,
//!   detection) with operation auditing.
//! - [`metrics`]: measured and closed-form MSE, SER bookkeeping, complexity
//!   counts, CSV schema.
//! - [`config`] / [`runner`]: scenario configuration, experiment presets, and
//!   the deterministic parallel scenario runner behind the CLI.

pub mod channel;
pub mod config;
pub mod error;
pub mod link;
pub mod metrics;
pub mod numerics;
pub mod precoder;
pub mod runner;

pub use error::{Error, Result};
