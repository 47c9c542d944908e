//! Cholesky factorization and Hermitian positive-definite solves.

use super::mat::{CMat, Complex64};
use super::HERMITIAN_TOL;
use crate::error::{Error, Result};

/// Lower-triangular L with L L^H = A.
///
/// A must be Hermitian PSD. Semi-definite inputs are retried once with a
/// diagonal jitter of 1e-12 * trace / n; pivots failing beyond that are an
/// error.
pub fn cholesky(a: &CMat) -> Result<CMat> {
    check_square_hermitian(a, "cholesky")?;
    let n = a.rows();
    let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
    let jitter = 1e-12 * trace.abs() / n as f64;
    match cholesky_raw(a, 0.0) {
        Ok(l) => Ok(l),
        Err(_) => cholesky_raw(a, jitter),
    }
}

fn cholesky_raw(a: &CMat, jitter: f64) -> Result<CMat> {
    let n = a.rows();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re + jitter;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: d, index: j });
        }
        let dj = d.sqrt();
        l[(j, j)] = Complex64::new(dj, 0.0);
        for i in (j + 1)..n {
            // Use the Hermitian average of a[i][j] and conj(a[j][i]).
            let mut s = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solve A X = B for Hermitian positive-definite A via Cholesky with one
/// iterative-refinement pass. Residual contract: |A X - B|_F <= 1e-10 |B|_F.
pub fn solve_hermitian(a: &CMat, b: &CMat) -> Result<CMat> {
    check_square_hermitian(a, "solve_hermitian")?;
    if a.rows() != b.rows() {
        return Err(Error::Dimension {
            context: "solve_hermitian",
            expected: format!("{} rows", a.rows()),
            got: format!("{} rows", b.rows()),
        });
    }
    let l = cholesky(a).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, index } => Error::Singular {
            context: format!("solve_hermitian pivot {index} = {pivot:.3e}"),
            cond_estimate: f64::INFINITY,
        },
        other => other,
    })?;

    let mut x = chol_solve(&l, b);
    // One refinement pass knocks the forward error down near machine level.
    let r = b.sub(&a.mul(&x));
    x = x.add(&chol_solve(&l, &r));

    let resid = b.sub(&a.mul(&x)).frob_norm();
    let bnorm = b.frob_norm();
    if resid > 1e-10 * bnorm.max(1e-300) {
        return Err(Error::Singular {
            context: format!("solve_hermitian residual {resid:.3e} vs |B| {bnorm:.3e}"),
            cond_estimate: cond_estimate_from_chol(&l),
        });
    }
    Ok(x)
}

/// Forward/back substitution through L L^H.
fn chol_solve(l: &CMat, b: &CMat) -> CMat {
    let n = l.rows();
    let m = b.cols();
    let mut y = b.clone();
    // L y = b
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            for c in 0..m {
                let t = lik * y[(k, c)];
                y[(i, c)] -= t;
            }
        }
        let d = l[(i, i)].re;
        for c in 0..m {
            y[(i, c)] /= d;
        }
    }
    // L^H x = y
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)].conj();
            for c in 0..m {
                let t = lki * y[(k, c)];
                y[(i, c)] -= t;
            }
        }
        let d = l[(i, i)].re;
        for c in 0..m {
            y[(i, c)] /= d;
        }
    }
    y
}

/// Rough condition estimate from the Cholesky diagonal.
fn cond_estimate_from_chol(l: &CMat) -> f64 {
    let n = l.rows();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..n {
        let d = l[(i, i)].re;
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    (dmax / dmin).powi(2)
}

fn check_square_hermitian(a: &CMat, context: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension {
            context: match context {
                "cholesky" => "cholesky",
                _ => "solve_hermitian",
            },
            expected: "square matrix".to_string(),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let scale = a.max_abs().max(1e-300);
    let asym = a.hermitian_asymmetry();
    if asym > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    Ok(())
}
