//! Preconditioned BiCGStab for the nonsymmetric drift operators.
//!
//! The operators are circulant-plus-diagonal, so a spectral inverse makes a
//! strong right preconditioner. All inner products use the pairwise tree
//! reduction to keep runs bitwise reproducible.

use crate::grid::pairwise_dot;

pub(crate) struct KrylovSolution {
    pub x: Vec<f64>,
}

#[derive(Debug)]
pub(crate) enum KrylovFailure {
    /// The residual stopped improving or ran out of iterations.
    Stall { rel_residual: f64, iterations: usize },
    /// A BiCGStab scalar collapsed (near-singular operator).
    Breakdown { rel_residual: f64, iterations: usize },
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(v: &[f64]) -> f64 {
    pairwise_dot(v, v).sqrt()
}

/// Right-preconditioned BiCGStab on `A x = b`.
///
/// Convergence target is `‖b - Ax‖₂ ≤ rel_tol · ‖b‖₂`. Stall detection: no
/// factor-2 improvement of the best residual over a trailing window.
pub(crate) fn bicgstab(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<KrylovSolution, KrylovFailure> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(KrylovSolution { x: vec![0.0; n] });
    }
    let target = rel_tol * b_norm;

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];

    let mut best = b_norm;
    let mut best_iter = 0usize;
    let stall_window = 60;

    for it in 1..=max_iter {
        let rho_new = pairwise_dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 * b_norm * b_norm || !rho_new.is_finite() {
            return Err(KrylovFailure::Breakdown {
                rel_residual: norm(&r) / b_norm,
                iterations: it,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_tilde = precond(&p);
        v = apply(&p_tilde);
        let denom = pairwise_dot(&r_hat, &v);
        if denom.abs() < 1e-300 * b_norm * b_norm || !denom.is_finite() {
            return Err(KrylovFailure::Breakdown {
                rel_residual: norm(&r) / b_norm,
                iterations: it,
            });
        }
        alpha = rho / denom;
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        if norm(&s) <= target {
            axpy(&mut x, alpha, &p_tilde);
            let res = check_residual(apply, b, &x);
            if res <= target * 4.0 {
                return Ok(KrylovSolution { x });
            }
            r = residual_vec(apply, b, &x);
        } else {
            let s_tilde = precond(&s);
            let t = apply(&s_tilde);
            let tt = pairwise_dot(&t, &t);
            if tt == 0.0 || !tt.is_finite() {
                return Err(KrylovFailure::Breakdown {
                    rel_residual: norm(&s) / b_norm,
                    iterations: it,
                });
            }
            omega = pairwise_dot(&t, &s) / tt;
            axpy(&mut x, alpha, &p_tilde);
            axpy(&mut x, omega, &s_tilde);
            r = s;
            axpy(&mut r, -omega, &t);
        }

        let r_norm = norm(&r);
        if !r_norm.is_finite() {
            return Err(KrylovFailure::Breakdown {
                rel_residual: f64::INFINITY,
                iterations: it,
            });
        }
        if r_norm <= target {
            // Recurrence residual met; confirm against the true residual.
            let res = check_residual(apply, b, &x);
            if res <= target * 4.0 {
                return Ok(KrylovSolution { x });
            }
            r = residual_vec(apply, b, &x);
        }
        if r_norm < best {
            if r_norm < 0.5 * best {
                best_iter = it;
            }
            best = r_norm;
        }
        if it - best_iter > stall_window {
            return Err(KrylovFailure::Stall {
                rel_residual: best / b_norm,
                iterations: it,
            });
        }
    }
    Err(KrylovFailure::Stall {
        rel_residual: norm(&r) / b_norm,
        iterations: max_iter,
    })
}

fn residual_vec(apply: &dyn Fn(&[f64]) -> Vec<f64>, b: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = apply(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

fn check_residual(apply: &dyn Fn(&[f64]) -> Vec<f64>, b: &[f64], x: &[f64]) -> f64 {
    norm(&residual_vec(apply, b, x))
}
