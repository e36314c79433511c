//! Elliptic layer: the prescribed-curvature equation `-Δ^Ch u + s₀ = g e^{2u/n}`,
//! its Poisson auxiliary problems, linearized solves, and the sub/super-solution
//! barrier constructions.
//!
//! The nonlinear equation is solved by damped Newton iteration on the pointwise
//! residual `F(u) = -Δ^Ch u + s₀ - g e^{2u/n}`. Each step inverts the
//! linearization `v ↦ -Δ^Ch v - (2/n) g e^{2u/n} v` with BiCGStab, right
//! preconditioned by a spectral shifted-Laplacian inverse. Loss of invertibility
//! of that linearization is reported as `NearSingular`; the continuation layer
//! reads it as evidence of approaching the solvability threshold.

use thiserror::Error;

use crate::background::{conformal_exp, Background, BackgroundError};
use crate::fft;
use crate::grid::{Grid, ScalarField};
use crate::krylov::{bicgstab, KrylovFailure};

#[derive(Debug, Error)]
pub enum EllipticError {
    #[error("right-hand side must have zero mean, got {0:.3e}")]
    NonZeroMean(f64),
    #[error("linear solve failed: relative residual {rel_residual:.3e} after {iterations} iterations")]
    SolverFailure { rel_residual: f64, iterations: usize },
    #[error("linearized operator is near-singular")]
    NearSingular,
    #[error("requires negative degree, got gamma = {0:.6e}")]
    NotNegativeDegree(f64),
    #[error("candidate curvature is identically zero")]
    CandidateIdenticallyZero,
    #[error("sub-solution inequality failed at point {point}: value {value:.3e}")]
    VerificationFailure { point: usize, value: f64 },
    #[error("barrier solve requires lambda ({lambda}) < lambda1 ({lambda1})")]
    InvalidBarrierOrder { lambda: f64, lambda1: f64 },
    #[error(transparent)]
    Background(#[from] BackgroundError),
}

/// Newton solver knobs.
#[derive(Debug, Clone)]
pub struct NewtonParams {
    /// Sup-norm residual target.
    pub tol_residual: f64,
    /// Maximum accepted Newton updates.
    pub max_iter: usize,
    /// Backtracking halvings per step before declaring a stall.
    pub max_backtracks: usize,
    /// Relative L² target for the inner linear solves.
    pub linear_tol: f64,
    /// Iteration cap for the inner linear solves.
    pub max_linear_iter: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams {
            tol_residual: 1e-10,
            max_iter: 50,
            max_backtracks: 20,
            linear_tol: 1e-12,
            max_linear_iter: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergeReason {
    MaxIter,
    NearSingular,
    LineSearchStall,
    Overflow,
}

impl std::fmt::Display for DivergeReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DivergeReason::MaxIter => "max_iter",
            DivergeReason::NearSingular => "near_singular",
            DivergeReason::LineSearchStall => "line_search_stall",
            DivergeReason::Overflow => "overflow",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    Diverged(DivergeReason),
}

/// Outcome of a nonlinear solve. `Converged` implies the residual met the
/// requested tolerance and `u` is present.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub u: Option<ScalarField>,
    pub residual_sup: f64,
    pub iterations: usize,
}

impl SolveOutcome {
    pub fn is_converged(&self) -> bool {
        matches!(self.status, SolveStatus::Converged)
    }

    pub fn solution(&self) -> Option<&ScalarField> {
        self.u.as_ref()
    }

    pub fn status_label(&self) -> String {
        match self.status {
            SolveStatus::Converged => "converged".to_string(),
            SolveStatus::Diverged(r) => format!("diverged:{r}"),
        }
    }
}

/// Pointwise residual `F(u) = -Δ^Ch u + s₀ - g e^{2u/n}`.
pub fn residual(
    u: &ScalarField,
    g: &ScalarField,
    bg: &Background,
) -> Result<ScalarField, EllipticError> {
    let e = conformal_exp(u, bg.n_f(), 1.0)?;
    Ok(bg
        .s0()
        .sub(&bg.chern_laplacian(u))
        .sub(&g.mul(&e)))
}

/// Directional derivative of the residual: `v ↦ -Δ^Ch v - (2/n) g e^{2u/n} v`.
pub fn apply_linearization(
    u: &ScalarField,
    v: &ScalarField,
    g: &ScalarField,
    bg: &Background,
) -> Result<ScalarField, EllipticError> {
    let e = conformal_exp(u, bg.n_f(), 1.0)?;
    let w = g.mul(&e).scale(2.0 / bg.n_f());
    Ok(apply_linearization_with(&w, v, bg))
}

/// Same operator with the reaction coefficient `(2/n) g e^{2u/n}` precomputed.
fn apply_linearization_with(w: &ScalarField, v: &ScalarField, bg: &Background) -> ScalarField {
    bg.chern_laplacian(v).scale(-1.0).sub(&w.mul(v))
}

/// Solves the linearized equation at state `u` for a given right-hand side.
pub fn solve_linearized(
    u: &ScalarField,
    g: &ScalarField,
    bg: &Background,
    rhs: &ScalarField,
    params: &NewtonParams,
) -> Result<ScalarField, EllipticError> {
    let e = conformal_exp(u, bg.n_f(), 1.0)?;
    let w = g.mul(&e).scale(2.0 / bg.n_f());
    solve_linearized_with(&w, bg, rhs, params)
}

fn solve_linearized_with(
    w: &ScalarField,
    bg: &Background,
    rhs: &ScalarField,
    params: &NewtonParams,
) -> Result<ScalarField, EllipticError> {
    let grid = bg.grid().clone();
    // Mean of the zeroth-order coefficient -w; kept positive so the
    // preconditioner symbol never vanishes.
    let shift = (-w.integrate()).max(1e-8);
    let apply = {
        let bg = bg.clone();
        let w = w.clone();
        let grid = grid.clone();
        move |x: &[f64]| -> Vec<f64> {
            let v = ScalarField::from_values_unchecked(&grid, x.to_vec());
            apply_linearization_with(&w, &v, &bg).values().to_vec()
        }
    };
    let precond = {
        let grid = grid.clone();
        move |x: &[f64]| -> Vec<f64> { fft::solve_sigma(&grid, x, |s| 1.0 / (s + shift)) }
    };
    match bicgstab(&apply, &precond, rhs.values(), params.linear_tol, params.max_linear_iter) {
        Ok(sol) => {
            let v = ScalarField::from_values_unchecked(&grid, sol.x);
            // Cheap lower bound on the inverse norm; a huge solution for a
            // moderate right-hand side flags an almost-singular operator.
            let vn = v.l2_norm();
            let bn = rhs.l2_norm();
            if vn > 0.0 && bn / vn < 1e-10 {
                return Err(EllipticError::NearSingular);
            }
            Ok(v)
        }
        Err(KrylovFailure::Stall { .. }) | Err(KrylovFailure::Breakdown { .. }) => {
            Err(EllipticError::NearSingular)
        }
    }
}

/// Damped Newton iteration on the prescribed-curvature residual.
///
/// Never panics; every failure mode is reported through the outcome status.
pub fn newton_solve(
    g: &ScalarField,
    bg: &Background,
    u_init: &ScalarField,
    params: &NewtonParams,
) -> SolveOutcome {
    let mut u = u_init.clone();
    let mut res = match residual(&u, g, bg) {
        Ok(r) => r,
        Err(_) => {
            return SolveOutcome {
                status: SolveStatus::Diverged(DivergeReason::Overflow),
                u: None,
                residual_sup: f64::INFINITY,
                iterations: 0,
            }
        }
    };
    let mut res_sup = res.sup_norm();
    let mut iterations = 0usize;

    loop {
        if res_sup <= params.tol_residual {
            return SolveOutcome {
                status: SolveStatus::Converged,
                u: Some(u),
                residual_sup: res_sup,
                iterations,
            };
        }
        if iterations >= params.max_iter {
            return SolveOutcome {
                status: SolveStatus::Diverged(DivergeReason::MaxIter),
                u: Some(u),
                residual_sup: res_sup,
                iterations,
            };
        }

        let e = match conformal_exp(&u, bg.n_f(), 1.0) {
            Ok(e) => e,
            Err(_) => {
                return SolveOutcome {
                    status: SolveStatus::Diverged(DivergeReason::Overflow),
                    u: Some(u),
                    residual_sup: res_sup,
                    iterations,
                }
            }
        };
        let w = g.mul(&e).scale(2.0 / bg.n_f());
        let neg_res = res.scale(-1.0);
        let delta = match solve_linearized_with(&w, bg, &neg_res, params) {
            Ok(d) if d.is_finite() => d,
            _ => {
                return SolveOutcome {
                    status: SolveStatus::Diverged(DivergeReason::NearSingular),
                    u: Some(u),
                    residual_sup: res_sup,
                    iterations,
                }
            }
        };

        let mut alpha = 1.0;
        let mut accepted = false;
        let mut overflow_blocked = false;
        for _ in 0..=params.max_backtracks {
            let trial = u.axpy(alpha, &delta);
            match residual(&trial, g, bg) {
                Ok(r) => {
                    let sup = r.sup_norm();
                    if sup.is_finite() && sup < (1.0 - 0.25 * alpha) * res_sup {
                        u = trial;
                        res = r;
                        res_sup = sup;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => overflow_blocked = true,
            }
            alpha *= 0.5;
        }
        if !accepted {
            let reason = if overflow_blocked {
                DivergeReason::Overflow
            } else {
                DivergeReason::LineSearchStall
            };
            return SolveOutcome {
                status: SolveStatus::Diverged(reason),
                u: Some(u),
                residual_sup: res_sup,
                iterations,
            };
        }
        iterations += 1;
    }
}

/// Solves `Δ^Ch f = rhs` with `∫f = 0`; the right-hand side must be zero-mean.
///
/// Balanced backgrounds are solved spectrally; drift backgrounds go through
/// BiCGStab preconditioned by the spectral inverse.
pub fn solve_poisson(bg: &Background, rhs: &ScalarField) -> Result<ScalarField, EllipticError> {
    let mean = rhs.integrate();
    if mean.abs() > 1e-10 {
        return Err(EllipticError::NonZeroMean(mean));
    }
    let grid: &Grid = bg.grid();
    let inverse = |x: &[f64]| -> Vec<f64> {
        fft::solve_sigma(grid, x, |s| if s == 0.0 { 0.0 } else { -1.0 / s })
    };
    let mut f = if bg.is_balanced() {
        ScalarField::from_values_unchecked(grid, inverse(rhs.values()))
    } else {
        let apply = |x: &[f64]| -> Vec<f64> {
            let v = ScalarField::from_values_unchecked(grid, x.to_vec());
            bg.chern_laplacian(&v).values().to_vec()
        };
        match bicgstab(&apply, &inverse, rhs.values(), 1e-13, 300) {
            Ok(sol) => ScalarField::from_values_unchecked(grid, sol.x),
            Err(KrylovFailure::Stall { rel_residual, iterations })
            | Err(KrylovFailure::Breakdown { rel_residual, iterations }) => {
                return Err(EllipticError::SolverFailure {
                    rel_residual,
                    iterations,
                })
            }
        }
    };
    let offset = -f.integrate();
    f = f.shift(offset);
    let check = bg.chern_laplacian(&f).sub(rhs).sup_norm();
    if check > 1e-9 * rhs.sup_norm().max(1.0) {
        return Err(EllipticError::SolverFailure {
            rel_residual: check,
            iterations: 0,
        });
    }
    Ok(f)
}

/// Builds the lower barrier `φ = f - t₀` with `Δ^Ch f = s₀ - Γ` and
/// `t₀ = ‖f‖_∞ + (n/2)·ln(sup|g| / (-Γ)) + 1`, then verifies the strict
/// pointwise sub-solution inequality before returning.
pub fn build_subsolution(
    g: &ScalarField,
    bg: &Background,
) -> Result<(ScalarField, f64), EllipticError> {
    let gamma = bg.gamma();
    if gamma >= 0.0 {
        return Err(EllipticError::NotNegativeDegree(gamma));
    }
    let sup_g = g.sup_norm();
    if sup_g == 0.0 {
        return Err(EllipticError::CandidateIdenticallyZero);
    }
    let rhs = bg.s0().shift(-gamma);
    let f = solve_poisson(bg, &rhs)?;
    let t0 = f.sup_norm() + 0.5 * bg.n_f() * (sup_g / (-gamma)).ln() + 1.0;
    let phi = f.shift(-t0);
    let res = residual(&phi, g, bg)?;
    let worst = res.max();
    if worst >= 0.0 {
        let point = res
            .values()
            .iter()
            .position(|&v| v == worst)
            .unwrap_or(0);
        return Err(EllipticError::VerificationFailure {
            point,
            value: worst,
        });
    }
    Ok((phi, t0))
}

/// Solves at the larger parameter `λ₁ > λ`; the solution is an upper barrier
/// for the problem at `λ` (its residual there is pointwise nonnegative).
pub fn build_supersolution(
    g0: &ScalarField,
    lambda: f64,
    lambda1: f64,
    bg: &Background,
    params: &NewtonParams,
) -> Result<SolveOutcome, EllipticError> {
    if lambda >= lambda1 {
        return Err(EllipticError::InvalidBarrierOrder { lambda, lambda1 });
    }
    let g1 = g0.shift(lambda1);
    Ok(newton_solve(
        &g1,
        bg,
        &ScalarField::zeros(bg.grid()),
        params,
    ))
}
