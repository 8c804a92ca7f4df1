//! Seeded initial ensembles and their grid densities.
//!
//! Draws come from ChaCha20, a counter-based generator: the seed picks the key and the
//! ensemble size picks the stream, so each `(seed, N)` cell is independent of the order
//! in which cells run. Integers map to floats by `(x >> 11) · 2⁻⁵³` and transcendental
//! functions come from `libm`, so ensembles are identical across platforms.

use mfgmpc::{DensityGrid, ParticleEnsemble, SpaceGrid};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::Distribution;

/// Truncations keeping less mass than this are rejected; rejection sampling would stall.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

struct Stream(ChaCha20Rng);

impl Stream {
    fn new(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(n as u64);
        Stream(rng)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Pair of independent standard normals by Box-Muller.
    fn normals(&mut self) -> [f64; 2] {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let a = std::f64::consts::TAU * u2;
        [r * libm::cos(a), r * libm::sin(a)]
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Mass of `N(mean, sd²)` on `[a, b]`.
fn normal_mass(mean: f64, sd: f64, a: f64, b: f64) -> f64 {
    normal_cdf((b - mean) / sd) - normal_cdf((a - mean) / sd)
}

/// Fraction of untruncated draws that land in the support.
pub fn acceptance_probability(d: &Distribution) -> f64 {
    match *d {
        Distribution::Uniform { .. } | Distribution::Points(_) => 1.0,
        Distribution::GaussianTruncated { mean, sd, lo, hi } => normal_mass(mean, sd, lo, hi),
        Distribution::TwoBump { means, sds, weight, lo, hi } => {
            weight * normal_mass(means[0], sds[0], lo, hi)
                + (1.0 - weight) * normal_mass(means[1], sds[1], lo, hi)
        }
    }
}

/// `n` i.i.d. draws from `d`, sorted ascending, keyed by `(seed, n)`.
///
/// `Points` ignores the seed and requires `n` to equal its length.
pub fn sample_initial(seed: u64, n: usize, d: &Distribution) -> mfgmpc::Result<ParticleEnsemble> {
    if n == 0 {
        return Err(mfgmpc::Error::Input("cannot sample an empty ensemble".into()));
    }
    let mut rng = Stream::new(seed, n);
    let mut out = Vec::with_capacity(n);
    match *d {
        Distribution::Uniform { lo, hi } => {
            out.extend((0..n).map(|_| lo + (hi - lo) * rng.unit()));
        }
        Distribution::GaussianTruncated { mean, sd, lo, hi } => {
            while out.len() < n {
                for z in rng.normals() {
                    let x = mean + sd * z;
                    if (lo..=hi).contains(&x) && out.len() < n {
                        out.push(x);
                    }
                }
            }
        }
        Distribution::TwoBump { means, sds, weight, lo, hi } => {
            while out.len() < n {
                let c = usize::from(rng.unit() >= weight);
                let x = means[c] + sds[c] * rng.normals()[0];
                if (lo..=hi).contains(&x) {
                    out.push(x);
                }
            }
        }
        Distribution::Points(ref p) => {
            if p.len() != n {
                return Err(mfgmpc::Error::Input(format!(
                    "{} fixed positions cannot form an ensemble of {n}",
                    p.len()
                )));
            }
            out.extend_from_slice(p);
        }
    }
    out.sort_by(f64::total_cmp);
    ParticleEnsemble::initial(out)
}

/// Grid density of `d` from exact cell masses, renormalized to the truncation; `Points` is binned into a histogram.
pub fn initial_density(grid: SpaceGrid, d: &Distribution) -> mfgmpc::Result<DensityGrid> {
    let truncated_masses = |bump: &dyn Fn(f64, f64) -> f64, lo: f64, hi: f64| -> Vec<f64> {
        (0..grid.cells())
            .map(|k| {
                let a = grid.face(k).max(lo);
                let b = grid.face(k + 1).min(hi);
                if b > a {
                    bump(a, b)
                } else {
                    0.0
                }
            })
            .collect()
    };
    match *d {
        Distribution::Uniform { lo, hi } => DensityGrid::uniform(grid, lo, hi),
        Distribution::GaussianTruncated { mean, sd, lo, hi } => {
            let masses = truncated_masses(&|a, b| normal_mass(mean, sd, a, b), lo, hi);
            DensityGrid::from_cell_masses(grid, &masses)
        }
        Distribution::TwoBump { means, sds, weight, lo, hi } => {
            let masses = truncated_masses(
                &|a, b| {
                    weight * normal_mass(means[0], sds[0], a, b)
                        + (1.0 - weight) * normal_mass(means[1], sds[1], a, b)
                },
                lo,
                hi,
            );
            DensityGrid::from_cell_masses(grid, &masses)
        }
        Distribution::Points(ref p) => DensityGrid::histogram(grid, p),
    }
}
