//! Shared fixtures for unit tests.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, ScalarField, VectorField};

pub(crate) fn random_field(grid: &Grid, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField::from_values(grid, values).unwrap()
}

pub(crate) fn random_vector(grid: &Grid, seed: u64) -> VectorField {
    let comps = (0..grid.dims())
        .map(|a| random_field(grid, seed + 1000 * a as u64))
        .collect();
    VectorField::from_components(comps).unwrap()
}

/// Zero-mean sum of a few low-wavenumber harmonics with bounded amplitude.
pub(crate) fn random_harmonics(grid: &Grid, seed: u64, amplitude: f64) -> ScalarField {
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

/// Rotated backward-difference gradient of a stream function (2-D only);
/// exactly divergence-free for the discrete backward divergence.
pub(crate) fn stream_theta(grid: &Grid, psi: &ScalarField) -> VectorField {
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

pub(crate) fn sample_theta(grid: &Grid, amplitude: f64) -> VectorField {
    let psi = ScalarField::from_fn(grid, |x| {
        amplitude
            * ((std::f64::consts::TAU * x[0]).sin() + (std::f64::consts::TAU * (x[1] + 0.2)).cos())
    });
    stream_theta(grid, &psi)
}
