//! Independent brute-force references for small grids.
//!
//! Everything here is assembled directly from the stencil definitions into
//! explicit matrices and solved with dense LU, deliberately sharing no code
//! with the spectral/Krylov production paths it cross-checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::background::Background;
use crate::elliptic::{DivergeReason, NewtonParams, SolveOutcome, SolveStatus};
use crate::grid::{Grid, ScalarField};
use crate::variational;

/// Dense factorizations stay trivial below this point count.
pub const MAX_DENSE_POINTS: usize = 4096;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid has {0} points, dense oracle caps at {MAX_DENSE_POINTS}")]
    TooLarge(usize),
    #[error("dense linear solve failed (singular matrix)")]
    Singular,
    #[error("finite-difference step {0:.3e} outside [1e-8, 1e-4]")]
    InvalidEps(f64),
    #[error("energy evaluation failed: {0}")]
    Energy(String),
}

/// Explicit matrix representation of a grid operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    size: usize,
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let x = DVector::from_column_slice(u.values());
        let y = &self.matrix * x;
        ScalarField::from_values_unchecked(u.grid(), y.iter().copied().collect())
    }

    /// Maximum absolute row sum; ~0 for pure difference operators.
    pub fn max_row_sum(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.size {
            let s: f64 = self.matrix.row(i).iter().sum();
            worst = worst.max(s.abs());
        }
        worst
    }
}

fn check_size(grid: &Grid) -> Result<usize, OracleError> {
    let p = grid.len();
    if p > MAX_DENSE_POINTS {
        return Err(OracleError::TooLarge(p));
    }
    Ok(p)
}

fn neighbor(grid: &Grid, p: usize, axis: usize, step: isize) -> usize {
    let s = grid.strides()[axis];
    let n = grid.sizes()[axis];
    let j = (p / s) % n;
    let jn = (j as isize + step).rem_euclid(n as isize) as usize;
    p + jn * s - j * s
}

/// 3-point stencil Laplacian assembled row by row.
pub fn dense_laplacian(grid: &Grid) -> Result<DenseOperator, OracleError> {
    let p_total = check_size(grid)?;
    let mut m = DMatrix::zeros(p_total, p_total);
    for p in 0..p_total {
        for a in 0..grid.dims() {
            let h2 = grid.spacing()[a] * grid.spacing()[a];
            let up = neighbor(grid, p, a, 1);
            let dn = neighbor(grid, p, a, -1);
            m[(p, up)] += 1.0 / h2;
            m[(p, p)] -= 2.0 / h2;
            m[(p, dn)] += 1.0 / h2;
        }
    }
    Ok(DenseOperator {
        size: p_total,
        matrix: m,
    })
}

/// Laplacian minus the forward-difference drift term.
pub fn dense_chern_laplacian(bg: &Background) -> Result<DenseOperator, OracleError> {
    let grid = bg.grid();
    let mut op = dense_laplacian(grid)?;
    for p in 0..op.size {
        for a in 0..grid.dims() {
            let t = bg.theta().component(a).values()[p];
            if t != 0.0 {
                let h = grid.spacing()[a];
                let up = neighbor(grid, p, a, 1);
                // subtract θ_a · (u[up] - u[p]) / h
                op.matrix[(p, up)] -= t / h;
                op.matrix[(p, p)] += t / h;
            }
        }
    }
    Ok(op)
}

/// Direct solve of `(I - a·Δ) u = f`.
pub fn dense_helmholtz_solve(
    grid: &Grid,
    f: &ScalarField,
    a: f64,
) -> Result<ScalarField, OracleError> {
    let lap = dense_laplacian(grid)?;
    let m = DMatrix::identity(lap.size, lap.size) - lap.matrix * a;
    let rhs = DVector::from_column_slice(f.values());
    let sol = m.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    Ok(ScalarField::from_values_unchecked(
        grid,
        sol.iter().copied().collect(),
    ))
}

/// Direct solve of `Δ^Ch f = rhs`, `∫f = 0`, via rank-one deflation of the
/// constant kernel.
pub fn dense_poisson(bg: &Background, rhs: &ScalarField) -> Result<ScalarField, OracleError> {
    let op = dense_chern_laplacian(bg)?;
    let p = op.size;
    let mut m = op.matrix;
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] += 1.0;
        }
    }
    let b = DVector::from_column_slice(rhs.values());
    let sol = m.lu().solve(&b).ok_or(OracleError::Singular)?;
    let mut f = ScalarField::from_values_unchecked(bg.grid(), sol.iter().copied().collect());
    let mean = f.integrate();
    f = f.shift(-mean);
    Ok(f)
}

/// Direct solve of the linearized operator `-Δ^Ch v - (2/n) g e^{2u/n} v = rhs`.
pub fn dense_solve_linearized(
    u: &ScalarField,
    g: &ScalarField,
    bg: &Background,
    rhs: &ScalarField,
) -> Result<ScalarField, OracleError> {
    let op = dense_chern_laplacian(bg)?;
    let p = op.size;
    let mut m = -op.matrix;
    let c = 2.0 / bg.n_f();
    for i in 0..p {
        m[(i, i)] -= c * g.values()[i] * (c * u.values()[i]).exp();
    }
    let b = DVector::from_column_slice(rhs.values());
    let sol = m.lu().solve(&b).ok_or(OracleError::Singular)?;
    Ok(ScalarField::from_values_unchecked(
        bg.grid(),
        sol.iter().copied().collect(),
    ))
}

/// Reference damped Newton solve with dense LU steps; same outcome contract as
/// the production solver but an entirely separate implementation.
pub fn dense_solve_elliptic(
    g: &ScalarField,
    bg: &Background,
    u0: &ScalarField,
    params: &NewtonParams,
) -> Result<SolveOutcome, OracleError> {
    let op = dense_chern_laplacian(bg)?;
    let p = op.size;
    let n_f = bg.n_f();
    let c = 2.0 / n_f;
    let s0 = DVector::from_column_slice(bg.s0().values());
    let gv = DVector::from_column_slice(g.values());
    let mut u = DVector::from_column_slice(u0.values());

    let eval = |u: &DVector<f64>| -> Option<DVector<f64>> {
        if u.iter().any(|v| (c * v).abs() > 700.0) {
            return None;
        }
        let mut r = &s0 - &op.matrix * u;
        for i in 0..p {
            r[i] -= gv[i] * (c * u[i]).exp();
        }
        Some(r)
    };

    let to_outcome = |status: SolveStatus, u: &DVector<f64>, res: f64, it: usize| SolveOutcome {
        status,
        u: Some(ScalarField::from_values_unchecked(
            bg.grid(),
            u.iter().copied().collect(),
        )),
        residual_sup: res,
        iterations: it,
    };

    let mut res = match eval(&u) {
        Some(r) => r,
        None => {
            return Ok(SolveOutcome {
                status: SolveStatus::Diverged(DivergeReason::Overflow),
                u: None,
                residual_sup: f64::INFINITY,
                iterations: 0,
            })
        }
    };
    let mut res_sup = res.amax();
    let mut iterations = 0usize;
    loop {
        if res_sup <= params.tol_residual {
            return Ok(to_outcome(SolveStatus::Converged, &u, res_sup, iterations));
        }
        if iterations >= params.max_iter {
            return Ok(to_outcome(
                SolveStatus::Diverged(DivergeReason::MaxIter),
                &u,
                res_sup,
                iterations,
            ));
        }
        let mut jac = -op.matrix.clone();
        for i in 0..p {
            jac[(i, i)] -= c * gv[i] * (c * u[i]).exp();
        }
        let neg_res = -&res;
        let delta = match jac.lu().solve(&neg_res) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                return Ok(to_outcome(
                    SolveStatus::Diverged(DivergeReason::NearSingular),
                    &u,
                    res_sup,
                    iterations,
                ))
            }
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut overflow_blocked = false;
        for _ in 0..=params.max_backtracks {
            let trial = &u + &delta * alpha;
            match eval(&trial) {
                Some(r) => {
                    let sup = r.amax();
                    if sup.is_finite() && sup < (1.0 - 0.25 * alpha) * res_sup {
                        u = trial;
                        res = r;
                        res_sup = sup;
                        accepted = true;
                        break;
                    }
                }
                None => overflow_blocked = true,
            }
            alpha *= 0.5;
        }
        if !accepted {
            let reason = if overflow_blocked {
                DivergeReason::Overflow
            } else {
                DivergeReason::LineSearchStall
            };
            return Ok(to_outcome(
                SolveStatus::Diverged(reason),
                &u,
                res_sup,
                iterations,
            ));
        }
        iterations += 1;
    }
}

/// Central finite difference of the energy in direction `phi`.
pub fn fd_energy_gradient(
    u: &ScalarField,
    g: &ScalarField,
    bg: &Background,
    phi: &ScalarField,
    eps: f64,
) -> Result<f64, OracleError> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(OracleError::InvalidEps(eps));
    }
    let up = variational::energy(&u.axpy(eps, phi), g, bg)
        .map_err(|e| OracleError::Energy(e.to_string()))?;
    let dn = variational::energy(&u.axpy(-eps, phi), g, bg)
        .map_err(|e| OracleError::Energy(e.to_string()))?;
    Ok((up - dn) / (2.0 * eps))
}
