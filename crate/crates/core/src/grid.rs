//! Periodic grid container, scalar/vector field storage, and discrete calculus.
//!
//! The domain is the unit torus in each axis: `N_i` uniformly spaced points with
//! spacing `h_i = 1/N_i`, so the total volume is exactly 1 and integrals are plain
//! weighted sums. The difference operators are chosen as an exact adjoint pair:
//! `gradient` is the forward difference, `divergence` the backward difference, and
//! `laplacian = divergence ∘ gradient` is the standard second-order 3-point stencil
//! per axis. With this pairing the summation-by-parts identities
//!
//! ```text
//! ∫ (∇u · V) dμ = -∫ u (div V) dμ        ∫ v Δu dμ = -∫ ∇u · ∇v dμ
//! ```
//!
//! hold to machine precision on every field, which the elliptic and variational
//! layers rely on. Reductions use a fixed pairwise tree so results are bitwise
//! reproducible across runs.

use std::sync::Arc;

use thiserror::Error;

use crate::fft;

/// Hard limit on the number of axes.
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid size: {0}")]
    InvalidSize(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field has {got} values, grid has {want} points")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("helmholtz coefficient must be nonnegative, got {0}")]
    NegativeCoefficient(f64),
    #[error("implicit solve residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    SolverFailure { residual: f64, tol: f64 },
}

#[derive(Debug)]
struct GridData {
    sizes: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    cell_measure: f64,
}

/// Uniform periodic lattice over the unit torus per axis (1 to 4 axes).
#[derive(Debug, Clone)]
pub struct Grid(Arc<GridData>);

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.sizes == other.0.sizes
    }
}

impl Grid {
    /// Builds a grid with the given per-axis point counts.
    ///
    /// Each count must be even and at least 4; evenness is required by the
    /// spectral solver path.
    pub fn new(sizes: &[usize]) -> Result<Grid, GridError> {
        if sizes.is_empty() || sizes.len() > MAX_DIMS {
            return Err(GridError::InvalidSize(format!(
                "expected 1..={} axes, got {}",
                MAX_DIMS,
                sizes.len()
            )));
        }
        for &n in sizes {
            if n < 4 {
                return Err(GridError::InvalidSize(format!("axis size {n} < 4")));
            }
            if n % 2 != 0 {
                return Err(GridError::InvalidSize(format!("axis size {n} is odd")));
            }
        }
        let spacing: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
        let mut strides = vec![0usize; sizes.len()];
        let mut s = 1usize;
        for a in (0..sizes.len()).rev() {
            strides[a] = s;
            s *= sizes[a];
        }
        let cell_measure = spacing.iter().product();
        Ok(Grid(Arc::new(GridData {
            sizes: sizes.to_vec(),
            spacing,
            strides,
            len: s,
            cell_measure,
        })))
    }

    pub fn dims(&self) -> usize {
        self.0.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0.sizes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.0.spacing
    }

    pub(crate) fn strides(&self) -> &[usize] {
        &self.0.strides
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.0.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one cell; the sum over all points is 1.
    pub fn cell_measure(&self) -> f64 {
        self.0.cell_measure
    }

    /// Physical coordinates of the point with the given linear (row-major) index.
    pub fn coords(&self, mut linear: usize) -> Vec<f64> {
        let d = self.dims();
        let mut x = vec![0.0; d];
        for a in 0..d {
            let j = linear / self.0.strides[a];
            linear %= self.0.strides[a];
            x[a] = j as f64 * self.0.spacing[a];
        }
        x
    }
}

/// Deterministic pairwise-tree summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        let mut acc = 0.0;
        for &x in v {
            acc += x;
        }
        acc
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Pairwise-tree dot product, same reduction order as `pairwise_sum`.
pub fn pairwise_dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    if u.len() <= 32 {
        let mut acc = 0.0;
        for (a, b) in u.iter().zip(v) {
            acc += a * b;
        }
        acc
    } else {
        let mid = u.len() / 2;
        pairwise_dot(&u[..mid], &v[..mid]) + pairwise_dot(&u[mid..], &v[mid..])
    }
}

/// Real samples on a grid, row-major.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let values = (0..grid.len()).map(|p| f(&grid.coords(p))).collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    /// Wraps raw values, rejecting length mismatches and non-finite entries.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<ScalarField, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                want: grid.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_values_unchecked(grid: &Grid, values: Vec<f64>) -> ScalarField {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid, "zip_map: grid mismatch");
        ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    pub fn shift(&self, c: f64) -> ScalarField {
        self.map(|v| v + c)
    }

    /// Quadrature of the field: pairwise sum of values times the cell measure.
    pub fn integrate(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.cell_measure()
    }

    /// Mean value; identical to `integrate` because the volume is 1.
    pub fn mean(&self) -> f64 {
        self.integrate()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn l2_norm(&self) -> f64 {
        (pairwise_dot(&self.values, &self.values) * self.grid.cell_measure()).sqrt()
    }

    /// Quadrature of `self * other`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "inner: grid mismatch");
        pairwise_dot(&self.values, &other.values) * self.grid.cell_measure()
    }

    /// Second-order 3-point Laplacian per axis, periodic wrap, analyst's sign
    /// (negative semidefinite).
    pub fn laplacian(&self) -> ScalarField {
        let grid = &self.grid;
        let u = &self.values;
        let mut out = vec![0.0; u.len()];
        for a in 0..grid.dims() {
            let s = grid.strides()[a];
            let n = grid.sizes()[a];
            let inv_h2 = 1.0 / (grid.spacing()[a] * grid.spacing()[a]);
            let block = s * n;
            for base in (0..u.len()).step_by(block) {
                for j in 0..n {
                    let up_off = if j + 1 < n { s as isize } else { -(((n - 1) * s) as isize) };
                    let dn_off = if j > 0 { -(s as isize) } else { ((n - 1) * s) as isize };
                    let row = base + j * s;
                    for r in 0..s {
                        let p = row + r;
                        let up = (p as isize + up_off) as usize;
                        let dn = (p as isize + dn_off) as usize;
                        out[p] += (u[up] - 2.0 * u[p] + u[dn]) * inv_h2;
                    }
                }
            }
        }
        ScalarField::from_values_unchecked(grid, out)
    }

    /// Forward-difference gradient; exact negative adjoint of `divergence`.
    pub fn gradient(&self) -> VectorField {
        let grid = &self.grid;
        let u = &self.values;
        let mut comps = Vec::with_capacity(grid.dims());
        for a in 0..grid.dims() {
            let s = grid.strides()[a];
            let n = grid.sizes()[a];
            let inv_h = 1.0 / grid.spacing()[a];
            let block = s * n;
            let mut out = vec![0.0; u.len()];
            for base in (0..u.len()).step_by(block) {
                for j in 0..n {
                    let up_off = if j + 1 < n { s as isize } else { -(((n - 1) * s) as isize) };
                    let row = base + j * s;
                    for r in 0..s {
                        let p = row + r;
                        let up = (p as isize + up_off) as usize;
                        out[p] = (u[up] - u[p]) * inv_h;
                    }
                }
            }
            comps.push(ScalarField::from_values_unchecked(grid, out));
        }
        VectorField {
            grid: grid.clone(),
            components: comps,
        }
    }

    /// Drift term `(du, θ)`: pointwise dot product of the gradient with `theta`.
    pub fn advect(&self, theta: &VectorField) -> Result<ScalarField, GridError> {
        if self.grid != theta.grid {
            return Err(GridError::GridMismatch);
        }
        let grad = self.gradient();
        let mut out = vec![0.0; self.values.len()];
        for a in 0..self.grid.dims() {
            let g = grad.components[a].values();
            let t = theta.components[a].values();
            for (o, (gv, tv)) in out.iter_mut().zip(g.iter().zip(t)) {
                *o += gv * tv;
            }
        }
        Ok(ScalarField::from_values_unchecked(&self.grid, out))
    }
}

/// One scalar component per grid axis.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Grid,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> VectorField {
        VectorField {
            grid: grid.clone(),
            components: (0..grid.dims()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_components(components: Vec<ScalarField>) -> Result<VectorField, GridError> {
        let grid = components
            .first()
            .map(|c| c.grid().clone())
            .ok_or(GridError::GridMismatch)?;
        if components.len() != grid.dims() {
            return Err(GridError::GridMismatch);
        }
        if components.iter().any(|c| *c.grid() != grid) {
            return Err(GridError::GridMismatch);
        }
        Ok(VectorField { grid, components })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, a: usize) -> &ScalarField {
        &self.components[a]
    }

    /// Max of the per-component sup norms.
    pub fn sup_norm(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.sup_norm()))
    }

    /// Backward-difference divergence; exact negative adjoint of `gradient`.
    pub fn divergence(&self) -> ScalarField {
        let grid = &self.grid;
        let mut out = vec![0.0; grid.len()];
        for a in 0..grid.dims() {
            let s = grid.strides()[a];
            let n = grid.sizes()[a];
            let inv_h = 1.0 / grid.spacing()[a];
            let block = s * n;
            let v = self.components[a].values();
            for base in (0..grid.len()).step_by(block) {
                for j in 0..n {
                    let dn_off = if j > 0 { -(s as isize) } else { ((n - 1) * s) as isize };
                    let row = base + j * s;
                    for r in 0..s {
                        let p = row + r;
                        let dn = (p as isize + dn_off) as usize;
                        out[p] += (v[p] - v[dn]) * inv_h;
                    }
                }
            }
        }
        ScalarField::from_values_unchecked(grid, out)
    }
}

/// Solves `(I - a·Δ)u = f` spectrally using the exact discrete symbol of the
/// 3-point Laplacian, so applying `(I - a·Δ)` to the output reproduces `f`.
pub fn helmholtz_solve(f: &ScalarField, a: f64) -> Result<ScalarField, GridError> {
    if a < 0.0 {
        return Err(GridError::NegativeCoefficient(a));
    }
    let grid = f.grid();
    let out = fft::solve_sigma(grid, f.values(), |sigma| 1.0 / (1.0 + a * sigma));
    let u = ScalarField::from_values_unchecked(grid, out);
    // Residual verification against the stencil operator.
    let residual = f.sub(&u.axpy(-a, &u.laplacian()));
    let tol = 1e-10 * f.sup_norm().max(1.0);
    let res = residual.sup_norm();
    if !res.is_finite() || res > tol {
        return Err(GridError::SolverFailure {
            residual: res,
            tol,
        });
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_values(grid, values).unwrap()
    }

    fn random_vector(grid: &Grid, seed: u64) -> VectorField {
        let comps = (0..grid.dims())
            .map(|a| random_field(grid, seed + a as u64))
            .collect();
        VectorField::from_components(comps).unwrap()
    }

    /// Discrete eigenvalue of the 3-point Laplacian on mode k=1.
    fn eig1(n: usize) -> f64 {
        let h = 1.0 / n as f64;
        -(2.0 / (h * h)) * (1.0 - (2.0 * std::f64::consts::PI * h).cos())
    }

    #[test]
    fn make_grid_64x64() {
        let g = Grid::new(&[64, 64]).unwrap();
        assert_eq!(g.spacing(), &[1.0 / 64.0, 1.0 / 64.0]);
        assert!((g.cell_measure() - 1.0 / 4096.0).abs() < 1e-18);
    }

    #[test]
    fn make_grid_1d() {
        let g = Grid::new(&[8]).unwrap();
        assert_eq!(g.cell_measure(), 1.0 / 8.0);
    }

    #[test]
    fn make_grid_rejects_bad_sizes() {
        assert!(Grid::new(&[3, 8]).is_err());
        assert!(Grid::new(&[6, 7]).is_err());
        assert!(Grid::new(&[]).is_err());
        assert!(Grid::new(&[8, 8, 8, 8, 8]).is_err());
    }

    #[test]
    fn cell_measures_sum_to_one() {
        for sizes in [vec![6, 10], vec![8], vec![4, 6, 4]] {
            let g = Grid::new(&sizes).unwrap();
            let total = g.len() as f64 * g.cell_measure();
            assert!((total - 1.0).abs() < 1e-12, "total = {total}");
        }
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let g = Grid::new(&[16, 8]).unwrap();
        let u = ScalarField::constant(&g, 3.7);
        assert_eq!(u.laplacian().sup_norm(), 0.0);
    }

    #[test]
    fn laplacian_discrete_eigenvalue() {
        let n = 64;
        let g = Grid::new(&[n, n]).unwrap();
        let u = ScalarField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let lu = u.laplacian();
        let expected = u.scale(eig1(n));
        assert!(lu.sub(&expected).sup_norm() < 1e-9 * eig1(n).abs());
    }

    #[test]
    fn laplacian_matches_dense_oracle() {
        let g = Grid::new(&[8, 8]).unwrap();
        let u = random_field(&g, 1);
        let dense = oracle::dense_laplacian(&g).unwrap();
        let lu = u.laplacian();
        let du = dense.apply(&u);
        assert!(lu.sub(&du).sup_norm() < 1e-12);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = Grid::new(&[8, 12]).unwrap();
        let u = ScalarField::constant(&g, -2.0);
        assert_eq!(u.gradient().sup_norm(), 0.0);
    }

    #[test]
    fn divergence_of_constant_is_zero() {
        let g = Grid::new(&[8, 12]).unwrap();
        let v = VectorField::from_components(vec![
            ScalarField::constant(&g, 4.0),
            ScalarField::constant(&g, -1.0),
        ])
        .unwrap();
        assert_eq!(v.divergence().sup_norm(), 0.0);
    }

    #[test]
    fn gradient_divergence_adjointness() {
        let g = Grid::new(&[12, 8]).unwrap();
        let u = random_field(&g, 2);
        let v = random_vector(&g, 77);
        let grad = u.gradient();
        let mut lhs = 0.0;
        for a in 0..g.dims() {
            lhs += grad.component(a).inner(v.component(a));
        }
        let rhs = -u.inner(&v.divergence());
        assert!((lhs - rhs).abs() < 1e-12, "gap = {}", (lhs - rhs).abs());
    }

    #[test]
    fn advect_zero_cases() {
        let g = Grid::new(&[8, 8]).unwrap();
        let u = random_field(&g, 3);
        let zero_theta = VectorField::zeros(&g);
        assert_eq!(u.advect(&zero_theta).unwrap().sup_norm(), 0.0);
        let c = ScalarField::constant(&g, 5.0);
        let theta = random_vector(&g, 4);
        assert_eq!(c.advect(&theta).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn advect_matches_componentwise_recomputation() {
        let g = Grid::new(&[8, 6]).unwrap();
        let u = random_field(&g, 5);
        let theta = random_vector(&g, 6);
        let adv = u.advect(&theta).unwrap();
        let grad = u.gradient();
        for p in 0..g.len() {
            let mut want = 0.0;
            for a in 0..g.dims() {
                want += theta.component(a).values()[p] * grad.component(a).values()[p];
            }
            assert!((adv.values()[p] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn advect_grid_mismatch() {
        let g1 = Grid::new(&[8, 8]).unwrap();
        let g2 = Grid::new(&[8, 10]).unwrap();
        let u = ScalarField::zeros(&g1);
        let theta = VectorField::zeros(&g2);
        assert!(matches!(u.advect(&theta), Err(GridError::GridMismatch)));
    }

    #[test]
    fn integrate_constant_uses_unit_volume() {
        let g = Grid::new(&[10, 6]).unwrap();
        assert!((ScalarField::constant(&g, 5.0).integrate() - 5.0).abs() < 1e-13);
    }

    #[test]
    fn integrate_sine_vanishes() {
        let g = Grid::new(&[64, 4]).unwrap();
        let u = ScalarField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!(u.integrate().abs() < 1e-12);
    }

    #[test]
    fn integrate_matches_naive_sum() {
        let g = Grid::new(&[32, 32]).unwrap();
        let u = random_field(&g, 7);
        let naive: f64 = u.values().iter().sum::<f64>() * g.cell_measure();
        assert!((u.integrate() - naive).abs() < 1e-10);
    }

    #[test]
    fn helmholtz_fixes_constants() {
        let g = Grid::new(&[16, 16]).unwrap();
        let f = ScalarField::constant(&g, 2.5);
        for a in [0.0, 0.1, 1.0, 50.0] {
            let u = helmholtz_solve(&f, a).unwrap();
            assert!(u.sub(&f).sup_norm() < 1e-12, "a = {a}");
        }
    }

    #[test]
    fn helmholtz_eigenfunction() {
        let n = 64;
        let g = Grid::new(&[n, n]).unwrap();
        let f = ScalarField::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let u = helmholtz_solve(&f, 1.0).unwrap();
        let expected = f.scale(1.0 / (1.0 - eig1(n)));
        assert!(u.sub(&expected).sup_norm() < 1e-12);
    }

    #[test]
    fn helmholtz_matches_dense_oracle() {
        let g = Grid::new(&[8, 8]).unwrap();
        let f = random_field(&g, 8);
        let u = helmholtz_solve(&f, 0.1).unwrap();
        let dense = oracle::dense_helmholtz_solve(&g, &f, 0.1).unwrap();
        assert!(u.sub(&dense).sup_norm() < 1e-10);
    }

    #[test]
    fn helmholtz_apply_back_consistency() {
        let g = Grid::new(&[16, 12]).unwrap();
        let f = random_field(&g, 9);
        let a = 0.7;
        let u = helmholtz_solve(&f, a).unwrap();
        let back = u.axpy(-a, &u.laplacian());
        assert!(back.sub(&f).sup_norm() < 1e-10);
    }

    #[test]
    fn helmholtz_rejects_negative_coefficient() {
        let g = Grid::new(&[8]).unwrap();
        let f = ScalarField::zeros(&g);
        assert!(matches!(
            helmholtz_solve(&f, -1.0),
            Err(GridError::NegativeCoefficient(_))
        ));
    }

    #[test]
    fn norms_of_constant_and_zero() {
        let g = Grid::new(&[8, 8]).unwrap();
        let u = ScalarField::constant(&g, -3.0);
        assert!((u.sup_norm() - 3.0).abs() < 1e-15);
        assert!((u.l2_norm() - 3.0).abs() < 1e-12);
        let z = ScalarField::zeros(&g);
        assert_eq!(z.sup_norm(), 0.0);
        assert_eq!(z.l2_norm(), 0.0);
    }

    #[test]
    fn l2_norm_squared_is_self_inner() {
        let g = Grid::new(&[16, 8]).unwrap();
        let u = random_field(&g, 10);
        let l2 = u.l2_norm();
        assert!((l2 * l2 - u.inner(&u)).abs() < 1e-12);
    }

    #[test]
    fn divergence_theorem() {
        let g = Grid::new(&[16, 10]).unwrap();
        let u = random_field(&g, 11);
        assert!(u.laplacian().integrate().abs() < 1e-12);
    }

    #[test]
    fn integration_by_parts() {
        let g = Grid::new(&[12, 8]).unwrap();
        let u = random_field(&g, 12);
        let v = random_field(&g, 13);
        let lhs = v.inner(&u.laplacian());
        let gu = u.gradient();
        let gv = v.gradient();
        let mut rhs = 0.0;
        for a in 0..g.dims() {
            rhs -= gu.component(a).inner(gv.component(a));
        }
        assert!((lhs - rhs).abs() < 1e-11, "gap = {}", (lhs - rhs).abs());
    }

    #[test]
    fn laplacian_symmetry() {
        let g = Grid::new(&[10, 8]).unwrap();
        let u = random_field(&g, 14);
        let v = random_field(&g, 15);
        let a = v.inner(&u.laplacian());
        let b = u.inner(&v.laplacian());
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn laplacian_second_order_refinement() {
        let continuum = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
        let err = |n: usize| (continuum + eig1(n)).abs();
        let r1 = err(8) / err(16);
        let r2 = err(16) / err(32);
        assert!((3.6..=4.4).contains(&r1), "ratio {r1}");
        assert!((3.6..=4.4).contains(&r2), "ratio {r2}");
    }

    #[test]
    fn three_dimensional_operators_keep_identities() {
        let g = Grid::new(&[4, 6, 8]).unwrap();
        let u = random_field(&g, 16);
        let v = random_field(&g, 17);
        let vec = random_vector(&g, 18);
        assert!(u.laplacian().integrate().abs() < 1e-12);
        let grad = u.gradient();
        let mut lhs = 0.0;
        for a in 0..3 {
            lhs += grad.component(a).inner(vec.component(a));
        }
        assert!((lhs + u.inner(&vec.divergence())).abs() < 1e-12);
        let ibp_lhs = v.inner(&u.laplacian());
        let gu = u.gradient();
        let gv = v.gradient();
        let mut ibp_rhs = 0.0;
        for a in 0..3 {
            ibp_rhs -= gu.component(a).inner(gv.component(a));
        }
        assert!((ibp_lhs - ibp_rhs).abs() < 1e-11);
        let f = random_field(&g, 19);
        let h = helmholtz_solve(&f, 0.4).unwrap();
        assert!(h.axpy(-0.4, &h.laplacian()).sub(&f).sup_norm() < 1e-10);
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let g = Grid::new(&[8]).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(&g, v),
            Err(GridError::NonFinite(3))
        ));
    }
}
