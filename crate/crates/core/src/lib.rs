//! Numerical suite for the prescribed-curvature problem
//! `-Δ^Ch u + s₀ = g e^{2u/n}` on periodic grids, and for the parabolic flow
//! `∂u/∂t = Δ^Ch u - s₀ + g e^{2u/n}` that relaxes toward its solutions.
//!
//! Layers, bottom up:
//!
//! - [`grid`]: periodic fields, discrete calculus, spectral Helmholtz kernel;
//! - [`background`]: validated `(s₀, θ, n)` data with divergence-free drift;
//! - [`elliptic`]: damped Newton-Krylov solves and sub/super-solution barriers;
//! - [`flow`]: IMEX time integration with a-priori-estimate monitors;
//! - [`variational`]: the energy functional, its variations, diagnostics;
//! - [`continuation`]: the solvability threshold λ* in `g₀ + λ` families;
//! - [`oracle`]: dense brute-force references for cross-checking small grids;
//! - [`cli`]: JSON-config run orchestration and trace/field serialization.

pub mod background;
pub mod cli;
pub mod continuation;
pub mod elliptic;
mod fft;
pub mod flow;
pub mod grid;
mod krylov;
pub mod oracle;
#[cfg(test)]
mod testutil;
pub mod variational;

pub use background::{Background, BackgroundError};
pub use continuation::{ContinuationError, ContinuationParams, ContinuationReport};
pub use elliptic::{DivergeReason, NewtonParams, SolveOutcome, SolveStatus};
pub use flow::{FlowParams, FlowRun, FlowStatus, FlowTrace};
pub use grid::{Grid, GridError, ScalarField, VectorField};
