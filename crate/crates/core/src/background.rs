//! Validated conformal background data: reference curvature `s₀`, Lee-form
//! drift `θ`, the complex-dimension parameter `n`, and the degree `Γ = ∫ s₀ dμ`.
//!
//! The Chern Laplacian acts on functions as `Δ^Ch u = Δ u - (du, θ)`, with `Δ`
//! the negative-semidefinite stencil Laplacian. The Gauduchon condition
//! `d*θ = 0` becomes "discretely divergence-free"; raw drift data is projected
//! onto that constraint at construction, so `∫ Δ^Ch u dμ = 0` holds to roundoff
//! for every `u` — the identity every integral bookkeeping step downstream uses.

use thiserror::Error;

use crate::fft;
use crate::grid::{Grid, GridError, ScalarField, VectorField};

/// Exponent-range guard: `exp` of anything above this overflows f64.
const EXP_GUARD: f64 = 700.0;

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error("complex-dimension parameter must be >= 2, got {0}")]
    InvalidDimension(u32),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("drift projection left divergence sup-norm {0:.3e} above 1e-8")]
    ProjectionFailure(f64),
    #[error("conformal factor overflow: 2·sup|u|/n = {0:.3e} exceeds exp range")]
    Overflow(f64),
}

/// Immutable background bundle `(grid, n, s₀, θ, Γ)`.
#[derive(Debug, Clone)]
pub struct Background {
    grid: Grid,
    n: u32,
    s0: ScalarField,
    theta: VectorField,
    gamma: f64,
    balanced: bool,
}

impl Background {
    /// Validates and assembles a background.
    ///
    /// `theta_raw` is made divergence-free by removing its gradient part:
    /// `θ = θ_raw - ∇p` with `Δp = div θ_raw`, solved spectrally. Fields that
    /// are already divergence-free (in particular θ_raw = 0 and rotated
    /// gradients of stream functions) pass through unchanged.
    pub fn new(
        grid: &Grid,
        n: u32,
        s0: ScalarField,
        theta_raw: VectorField,
    ) -> Result<Background, BackgroundError> {
        if n < 2 {
            return Err(BackgroundError::InvalidDimension(n));
        }
        if s0.grid() != grid || theta_raw.grid() != grid {
            return Err(BackgroundError::Grid(GridError::GridMismatch));
        }
        let div = theta_raw.divergence();
        let theta = if div.sup_norm() == 0.0 {
            theta_raw
        } else {
            let p_vals = fft::solve_sigma(grid, div.values(), |sigma| {
                if sigma == 0.0 {
                    0.0
                } else {
                    -1.0 / sigma
                }
            });
            let p = ScalarField::from_values_unchecked(grid, p_vals);
            let grad_p = p.gradient();
            let comps = theta_raw
                .components()
                .iter()
                .zip(grad_p.components())
                .map(|(t, gp)| t.sub(gp))
                .collect();
            VectorField::from_components(comps)?
        };
        let residual_div = theta.divergence().sup_norm();
        if residual_div >= 1e-8 {
            return Err(BackgroundError::ProjectionFailure(residual_div));
        }
        let gamma = s0.integrate();
        let balanced = theta.sup_norm() == 0.0;
        Ok(Background {
            grid: grid.clone(),
            n,
            s0,
            theta,
            gamma,
            balanced,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Complex-dimension parameter; enters formulas only through `2/n` and `n`.
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn n_f(&self) -> f64 {
        f64::from(self.n)
    }

    pub fn s0(&self) -> &ScalarField {
        &self.s0
    }

    pub fn theta(&self) -> &VectorField {
        &self.theta
    }

    /// Cached degree Γ = ∫ s₀ dμ.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Recomputes Γ from the stored curvature field.
    pub fn gauduchon_degree(&self) -> f64 {
        self.s0.integrate()
    }

    /// True when the drift vanishes identically.
    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// `Δ^Ch u = Δu - (du, θ)`; coincides with the plain Laplacian when balanced.
    pub fn chern_laplacian(&self, u: &ScalarField) -> ScalarField {
        assert_eq!(u.grid(), &self.grid, "chern_laplacian: grid mismatch");
        let lap = u.laplacian();
        if self.balanced {
            lap
        } else {
            lap.sub(&u.advect(&self.theta).expect("grids checked"))
        }
    }

    /// Curvature of the conformally changed metric: `e^{-2u/n}(-Δ^Ch u + s₀)`.
    pub fn conformal_curvature(&self, u: &ScalarField) -> Result<ScalarField, BackgroundError> {
        let neg_factor = conformal_exp(u, self.n_f(), -1.0)?;
        let lhs = self.s0.sub(&self.chern_laplacian(u));
        Ok(lhs.mul(&neg_factor))
    }
}

/// `e^{sign·2u/n}` with an exponent-range guard.
pub(crate) fn conformal_exp(
    u: &ScalarField,
    n: f64,
    sign: f64,
) -> Result<ScalarField, BackgroundError> {
    let amplitude = 2.0 * u.sup_norm() / n;
    if amplitude > EXP_GUARD {
        return Err(BackgroundError::Overflow(amplitude));
    }
    let c = sign * 2.0 / n;
    Ok(u.map(|v| (c * v).exp()))
}

/// `e^{u/n}` with the same guard (used by the `∫|∇e^{u/n}|²` diagnostic).
pub(crate) fn half_conformal_exp(u: &ScalarField, n: f64) -> Result<ScalarField, BackgroundError> {
    let amplitude = u.sup_norm() / n;
    if amplitude > EXP_GUARD {
        return Err(BackgroundError::Overflow(amplitude));
    }
    Ok(u.map(|v| (v / n).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_field, sample_theta};

    #[test]
    fn zero_drift_is_balanced() {
        let g = Grid::new(&[8, 8]).unwrap();
        let bg =
            Background::new(&g, 2, ScalarField::constant(&g, -1.0), VectorField::zeros(&g))
                .unwrap();
        assert!(bg.is_balanced());
        assert_eq!(bg.theta().sup_norm(), 0.0);
    }

    #[test]
    fn pure_gradient_drift_projects_away() {
        let g = Grid::new(&[16, 16]).unwrap();
        let q = random_field(&g, 21);
        let theta_raw = q.gradient();
        let bg = Background::new(&g, 2, ScalarField::constant(&g, -1.0), theta_raw).unwrap();
        assert!(bg.theta().sup_norm() < 1e-8, "sup = {}", bg.theta().sup_norm());
        assert!(!bg.is_balanced() || bg.theta().sup_norm() == 0.0);
    }

    #[test]
    fn stream_function_drift_passes_through() {
        let g = Grid::new(&[16, 16]).unwrap();
        let theta_raw = sample_theta(&g, 0.5);
        let raw_copy = theta_raw.clone();
        let bg = Background::new(&g, 2, ScalarField::constant(&g, -1.0), theta_raw).unwrap();
        for a in 0..2 {
            let diff = bg.theta().component(a).sub(raw_copy.component(a));
            assert!(diff.sup_norm() < 1e-10);
        }
        assert!(bg.theta().divergence().sup_norm() < 1e-12);
        assert!(!bg.is_balanced());
    }

    #[test]
    fn degree_of_constant_curvature() {
        let g = Grid::new(&[8, 8]).unwrap();
        let bg =
            Background::new(&g, 2, ScalarField::constant(&g, -2.0), VectorField::zeros(&g))
                .unwrap();
        assert!((bg.gauduchon_degree() + 2.0).abs() < 1e-13);
        assert_eq!(bg.gamma(), bg.gauduchon_degree());
    }

    #[test]
    fn degree_is_mean_value() {
        let g = Grid::new(&[64, 4]).unwrap();
        let s0 = ScalarField::from_fn(&g, |x| {
            -1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin()
        });
        let bg = Background::new(&g, 2, s0, VectorField::zeros(&g)).unwrap();
        assert!((bg.gauduchon_degree() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degree_matches_independent_quadrature() {
        let g = Grid::new(&[12, 10]).unwrap();
        let s0 = random_field(&g, 22);
        let naive: f64 = s0.values().iter().sum::<f64>() * g.cell_measure();
        let bg = Background::new(&g, 3, s0, VectorField::zeros(&g)).unwrap();
        assert!((bg.gauduchon_degree() - naive).abs() < 1e-12);
    }

    #[test]
    fn chern_laplacian_balanced_equals_laplacian() {
        let g = Grid::new(&[8, 8]).unwrap();
        let bg =
            Background::new(&g, 2, ScalarField::constant(&g, -1.0), VectorField::zeros(&g))
                .unwrap();
        let u = random_field(&g, 23);
        let a = bg.chern_laplacian(&u);
        let b = u.laplacian();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn chern_laplacian_annihilates_constants() {
        let g = Grid::new(&[16, 16]).unwrap();
        let bg = Background::new(
            &g,
            2,
            ScalarField::constant(&g, -1.0),
            sample_theta(&g, 0.4),
        )
        .unwrap();
        let c = ScalarField::constant(&g, 2.5);
        assert_eq!(bg.chern_laplacian(&c).sup_norm(), 0.0);
    }

    #[test]
    fn chern_laplacian_integrates_to_zero() {
        let g = Grid::new(&[16, 16]).unwrap();
        let bg = Background::new(
            &g,
            2,
            ScalarField::constant(&g, -1.0),
            sample_theta(&g, 0.7),
        )
        .unwrap();
        for seed in [24, 25, 26] {
            let u = random_field(&g, seed);
            assert!(bg.chern_laplacian(&u).integrate().abs() < 1e-10);
        }
    }

    #[test]
    fn conformal_curvature_at_zero_is_s0() {
        let g = Grid::new(&[8, 8]).unwrap();
        let s0 = random_field(&g, 27);
        let bg = Background::new(&g, 2, s0.clone(), VectorField::zeros(&g)).unwrap();
        let out = bg.conformal_curvature(&ScalarField::zeros(&g)).unwrap();
        for (a, b) in out.values().iter().zip(s0.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn conformal_curvature_of_constant_shift() {
        let g = Grid::new(&[8, 8]).unwrap();
        let s0 = random_field(&g, 28);
        let bg = Background::new(&g, 2, s0.clone(), VectorField::zeros(&g)).unwrap();
        let c = 0.8;
        let u = ScalarField::constant(&g, c);
        let out = bg.conformal_curvature(&u).unwrap();
        let expected = s0.scale((-2.0 * c / 2.0).exp());
        assert!(out.sub(&expected).sup_norm() < 1e-12);
    }

    #[test]
    fn conformal_curvature_scaling_consistency() {
        let g = Grid::new(&[8, 8]).unwrap();
        let s0 = random_field(&g, 29);
        let bg = Background::new(&g, 3, s0, VectorField::zeros(&g)).unwrap();
        let u = random_field(&g, 30);
        let c = 0.4;
        let shifted = bg.conformal_curvature(&u.shift(c)).unwrap();
        let scaled = bg
            .conformal_curvature(&u)
            .unwrap()
            .scale((-2.0 * c / 3.0).exp());
        let scale = shifted.sup_norm().max(1.0);
        assert!(shifted.sub(&scaled).sup_norm() < 1e-12 * scale);
    }

    #[test]
    fn conformal_curvature_overflow_guard() {
        let g = Grid::new(&[8]).unwrap();
        let bg =
            Background::new(&g, 2, ScalarField::constant(&g, -1.0), VectorField::zeros(&g))
                .unwrap();
        let u = ScalarField::constant(&g, 800.0);
        assert!(matches!(
            bg.conformal_curvature(&u),
            Err(BackgroundError::Overflow(_))
        ));
    }

    #[test]
    fn rejects_small_n() {
        let g = Grid::new(&[8]).unwrap();
        let r = Background::new(&g, 1, ScalarField::zeros(&g), VectorField::zeros(&g));
        assert!(matches!(r, Err(BackgroundError::InvalidDimension(1))));
    }
}
