//! Cyclic Jacobi eigensolver for Hermitian matrices.
//!
//! Each (p, q) target is annihilated by a phased Givens rotation: the complex
//! off-diagonal entry is rotated real first, then the standard real Jacobi
//! rotation is applied. Quadratic convergence, machine-level orthogonality,
//! and no workspace drama for the small matrices this crate deals with.

use super::mat::{CMat, Complex64};
use super::HERMITIAN_TOL;
use crate::error::{Error, Result};

/// Eigen-decomposition of a Hermitian matrix.
///
/// Returns eigenvalues ascending and the matching unitary eigenvector matrix
/// (columns), so that A = V diag(w) V^H.
pub fn hermitian_eig(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension {
            context: "hermitian_eig",
            expected: "square matrix".to_string(),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let scale = a.max_abs().max(1e-300);
    let asym = a.hermitian_asymmetry();
    if asym > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { asymmetry: asym });
    }

    let n = a.rows();
    // Work on the Hermitian average so tiny input asymmetry cannot bias sweeps.
    let mut w = CMat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)].conj()));
    let mut v = CMat::identity(n);
    if n == 1 {
        return Ok((vec![w[(0, 0)].re], v));
    }

    let norm = w.frob_norm().max(1e-300);
    let stop = 1e-14 * norm;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w[(p, q)].norm_sqr();
            }
        }
        if (2.0 * off).sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut w, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].re.partial_cmp(&w[(j, j)].re).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| w[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((values, vectors))
}

fn rotate(a: &mut CMat, v: &mut CMat, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag < 1e-300 {
        return;
    }
    let alpha = a[(p, p)].re;
    let beta = a[(q, q)].re;
    let phase = apq / mag; // e^{i phi}
    let tau = (beta - alpha) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // U[p][p] = c, U[p][q] = s, U[q][p] = -s e^{-i phi}, U[q][q] = c e^{-i phi}
    let u_qp = -s * phase.conj();
    let u_qq = c * phase.conj();

    let n = a.rows();
    // A <- U^H A (rows p and q).
    for j in 0..n {
        let ap = a[(p, j)];
        let aq = a[(q, j)];
        a[(p, j)] = c * ap + u_qp.conj() * aq;
        a[(q, j)] = s * ap + u_qq.conj() * aq;
    }
    // A <- A U (columns p and q).
    for i in 0..n {
        let ap = a[(i, p)];
        let aq = a[(i, q)];
        a[(i, p)] = c * ap + u_qp * aq;
        a[(i, q)] = s * ap + u_qq * aq;
    }
    // Clean roundoff: exact zero target, real diagonal, Hermitian mirror.
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);

    for i in 0..v.rows() {
        let vp = v[(i, p)];
        let vq = v[(i, q)];
        v[(i, p)] = c * vp + u_qp * vq;
        v[(i, q)] = s * vp + u_qq * vq;
    }
}
