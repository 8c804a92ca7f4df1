#![allow(dead_code)]

use mfgmpc::{DensityGrid, SpaceGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const GAUSS_MEAN: f64 = 0.5;
pub const GAUSS_SD: f64 = 0.15;

/// Normal(0.5, 0.15²) restricted to [0, 1], unnormalized.
pub fn truncated_gaussian_pdf(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        let z = (x - GAUSS_MEAN) / GAUSS_SD;
        (-0.5 * z * z).exp()
    } else {
        0.0
    }
}

/// Support [0, 1] with a quarter-width margin on each side.
pub fn fixture_grid(cells: usize) -> SpaceGrid {
    SpaceGrid::covering(0.0, 1.0, cells).unwrap()
}

pub fn truncated_gaussian_density(grid: SpaceGrid) -> DensityGrid {
    DensityGrid::from_density_fn(grid, 16, truncated_gaussian_pdf).unwrap()
}

/// I.i.d. draws from the truncated Gaussian by Box-Muller with rejection.
pub fn sample_truncated_gaussian(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        for z in [r * (std::f64::consts::TAU * u2).cos(), r * (std::f64::consts::TAU * u2).sin()] {
            let x = GAUSS_MEAN + GAUSS_SD * z;
            if (0.0..=1.0).contains(&x) && out.len() < n {
                out.push(x);
            }
        }
    }
    out
}

pub fn uniform_vec(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
