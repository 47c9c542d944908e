//! Deterministic complex linear algebra, transforms, special functions, and
//! seeded random generation. Everything here is a pure function of its inputs;
//! all tolerances are fixed contract constants.

mod bessel;
mod dft;
mod eig;
mod linalg;
mod mat;
mod rng;

pub use bessel::bessel_j0;
pub use dft::{circular_convolve, dft, dft_naive};
pub use eig::hermitian_eig;
pub use linalg::{cholesky, solve_hermitian};
pub use mat::{CMat, CVec, Complex64};
pub use rng::{gaussian_complex, RngStream};

/// Relative tolerance for Hermitian-symmetry contract checks.
pub const HERMITIAN_TOL: f64 = 1e-10;
