//! Shared fixture builders for the integration suites.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cyflow::background::Background;
use cyflow::grid::{Grid, ScalarField, VectorField};

pub fn balanced_bg(grid: &Grid, s0: ScalarField, n: u32) -> Background {
    Background::new(grid, n, s0, VectorField::zeros(grid)).unwrap()
}

/// Zero-mean sum of three low-wavenumber harmonics; sup norm at most `amplitude`.
pub fn random_harmonics(grid: &Grid, seed: u64, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = grid.dims();
    let terms = 3;
    let mut specs = Vec::new();
    for _ in 0..terms {
        let mut wave = vec![0i64; dims];
        while wave.iter().all(|&k| k == 0) {
            for w in wave.iter_mut() {
                *w = rng.gen_range(-2i64..=2);
            }
        }
        let amp = amplitude / terms as f64 * rng.gen_range(0.4..1.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        specs.push((wave, amp, phase));
    }
    ScalarField::from_fn(grid, |x| {
        specs
            .iter()
            .map(|(wave, amp, phase)| {
                let arg: f64 = wave
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| k as f64 * xi)
                    .sum::<f64>()
                    * std::f64::consts::TAU
                    + phase;
                amp * arg.cos()
            })
            .sum()
    })
}

/// Rotated backward-difference gradient of a stream function (2-D grids);
/// exactly divergence-free for the discrete operators.
pub fn stream_theta(grid: &Grid, psi: &ScalarField) -> VectorField {
    assert_eq!(grid.dims(), 2);
    let n0 = grid.sizes()[0];
    let n1 = grid.sizes()[1];
    let h0 = grid.spacing()[0];
    let h1 = grid.spacing()[1];
    let at = |i: usize, j: usize| psi.values()[i * n1 + j];
    let mut c0 = vec![0.0; grid.len()];
    let mut c1 = vec![0.0; grid.len()];
    for i in 0..n0 {
        for j in 0..n1 {
            let im = (i + n0 - 1) % n0;
            let jm = (j + n1 - 1) % n1;
            c0[i * n1 + j] = (at(i, j) - at(i, jm)) / h1;
            c1[i * n1 + j] = -(at(i, j) - at(im, j)) / h0;
        }
    }
    VectorField::from_components(vec![
        ScalarField::from_values(grid, c0).unwrap(),
        ScalarField::from_values(grid, c1).unwrap(),
    ])
    .unwrap()
}

/// One randomized instance of the nonpositive-candidate problem class.
pub struct Instance {
    pub label: String,
    pub bg: Background,
    pub g: ScalarField,
    /// True when `max g < 0` strictly (the exponential-decay regime).
    pub strictly_negative: bool,
}

/// Ten balanced instances on the given grid: three with `g = -1` (decay
/// regime), five with strictly negative randomized `g`, two with `g <= 0`
/// touching zero.
pub fn nonpositive_instances(grid: &Grid) -> Vec<Instance> {
    let mut out = Vec::new();
    for i in 0..10u64 {
        let s0_amp = if i < 3 { 0.15 } else { 0.2 };
        let s0 = random_harmonics(grid, 1000 + i, s0_amp).shift(-1.0);
        let bg = balanced_bg(grid, s0, 2);
        let (g, label, strictly_negative) = if i < 3 {
            (
                ScalarField::constant(grid, -1.0),
                format!("instance {i} (g = -1)"),
                true,
            )
        } else if i < 8 {
            (
                random_harmonics(grid, 2000 + i, 0.3).shift(-0.8),
                format!("instance {i} (g < 0 random)"),
                true,
            )
        } else {
            let axis = (i % 2) as usize;
            let g = ScalarField::from_fn(grid, |x| {
                -0.4 * (1.0 + (std::f64::consts::TAU * x[axis]).cos())
            });
            (g, format!("instance {i} (g <= 0 touching zero)"), false)
        };
        assert!(g.max() <= 0.0);
        assert!(bg.gamma() < 0.0);
        out.push(Instance {
            label,
            bg,
            g,
            strictly_negative,
        });
    }
    out
}
