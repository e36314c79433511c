//! Spectral kernels on the periodic grid.
//!
//! Everything here works with the exact discrete symbol of the 3-point
//! Laplacian, `σ(k) = Σ_a (2/h_a²)(1 - cos(2π k_a / N_a)) ≥ 0`, so the spectral
//! solves are exact inverses of the stencil operators (up to FFT roundoff), not
//! of the continuum ones.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::grid::Grid;

/// Per-axis tables of the nonnegative Laplacian symbol.
pub(crate) fn sigma_tables(grid: &Grid) -> Vec<Vec<f64>> {
    grid.sizes()
        .iter()
        .zip(grid.spacing())
        .map(|(&n, &h)| {
            (0..n)
                .map(|k| {
                    let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    (2.0 / (h * h)) * (1.0 - w.cos())
                })
                .collect()
        })
        .collect()
}

fn transform(grid: &Grid, data: &mut [Complex<f64>], forward: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let mut line: Vec<Complex<f64>> = Vec::new();
    for a in 0..grid.dims() {
        let n = grid.sizes()[a];
        let s = grid.strides()[a];
        let fft = if forward {
            planner.plan_fft_forward(n)
        } else {
            planner.plan_fft_inverse(n)
        };
        line.resize(n, Complex::new(0.0, 0.0));
        let block = n * s;
        for base in (0..data.len()).step_by(block) {
            for r in 0..s {
                for j in 0..n {
                    line[j] = data[base + j * s + r];
                }
                fft.process(&mut line);
                for j in 0..n {
                    data[base + j * s + r] = line[j];
                }
            }
        }
    }
}

/// Applies a diagonal (in Fourier space) multiplier depending only on σ(k).
///
/// Returns the real part of the inverse transform; the input is real so the
/// imaginary residue is pure roundoff.
pub(crate) fn solve_sigma(grid: &Grid, rhs: &[f64], mult: impl Fn(f64) -> f64) -> Vec<f64> {
    let sigma = sigma_tables(grid);
    let mut data: Vec<Complex<f64>> = rhs.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(grid, &mut data, true);

    let dims = grid.dims();
    let sizes = grid.sizes();
    let mut idx = vec![0usize; dims];
    for value in data.iter_mut() {
        let mut s = 0.0;
        for a in 0..dims {
            s += sigma[a][idx[a]];
        }
        *value *= mult(s);
        // Row-major odometer over mode indices.
        for a in (0..dims).rev() {
            idx[a] += 1;
            if idx[a] < sizes[a] {
                break;
            }
            idx[a] = 0;
        }
    }

    transform(grid, &mut data, false);
    let scale = 1.0 / grid.len() as f64;
    data.iter().map(|c| c.re * scale).collect()
}
