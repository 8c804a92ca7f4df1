//! Empirical measures, the 1D Wasserstein-1 distance and moment diagnostics.

use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::model::ParticleEnsemble;

/// Inputs to [`w1`] must carry unit mass to within this tolerance.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Uniform atomic measure `(1/N) Σ δ_{x_i}` with atoms sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(mut atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Input("empirical measure needs at least one atom".into()));
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("empirical measure atoms must be finite".into()));
        }
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `m^{N-1}_{X_{-i}}`: the measure of the ensemble with particle `i` removed.
    pub fn leave_one_out(x: &ParticleEnsemble, i: usize) -> Result<Self> {
        if i >= x.len() {
            return Err(Error::Input(format!("particle index {i} out of range")));
        }
        let rest = x
            .positions()
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &x)| x)
            .collect();
        Self::new(rest)
    }

    /// `#{atoms <= x} / N`.
    fn cdf(&self, x: f64) -> f64 {
        self.atoms.partition_point(|&a| a <= x) as f64 / self.atoms.len() as f64
    }
}

/// `m^N_X`.
pub fn empirical(x: &ParticleEnsemble) -> EmpiricalMeasure {
    let mut atoms = x.positions().to_vec();
    atoms.sort_by(f64::total_cmp);
    EmpiricalMeasure { atoms }
}

/// Either representation of a probability measure on the line.
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    Empirical(&'a EmpiricalMeasure),
    Density(&'a DensityGrid),
}

impl<'a> From<&'a EmpiricalMeasure> for Measure<'a> {
    fn from(m: &'a EmpiricalMeasure) -> Self {
        Measure::Empirical(m)
    }
}

impl<'a> From<&'a DensityGrid> for Measure<'a> {
    fn from(m: &'a DensityGrid) -> Self {
        Measure::Density(m)
    }
}

/// Right-continuous CDF with precomputed cumulative cell masses for densities.
enum Cdf<'a> {
    Atoms(&'a EmpiricalMeasure),
    Cells {
        density: &'a DensityGrid,
        cumulative: Vec<f64>,
    },
}

impl<'a> Cdf<'a> {
    fn new(m: Measure<'a>) -> Result<Self> {
        match m {
            Measure::Empirical(e) => Ok(Cdf::Atoms(e)),
            Measure::Density(d) => {
                let dx = d.grid().dx();
                let mut cumulative = Vec::with_capacity(d.values().len() + 1);
                let mut acc = 0.0;
                cumulative.push(0.0);
                for v in d.values() {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(Error::Input("density has a negative or non-finite cell".into()));
                    }
                    acc += v * dx;
                    cumulative.push(acc);
                }
                if (acc - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(Error::Input(format!(
                        "measure is not normalized: mass {acc}"
                    )));
                }
                Ok(Cdf::Cells {
                    density: d,
                    cumulative,
                })
            }
        }
    }

    fn push_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Cdf::Atoms(e) => out.extend_from_slice(e.atoms()),
            Cdf::Cells { density, .. } => out.extend(density.grid().faces()),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            Cdf::Atoms(e) => e.cdf(x),
            Cdf::Cells {
                density,
                cumulative,
            } => {
                let grid = density.grid();
                if x < grid.x_min() {
                    0.0
                } else if x >= grid.x_max() {
                    cumulative[grid.cells()]
                } else {
                    let k = grid.locate(x).expect("x lies inside the grid");
                    cumulative[k] + density.values()[k] * (x - grid.face(k))
                }
            }
        }
    }
}

/// `∫ |d(x)| dx` over `[0, h]` for affine `d` with endpoint values `left`, `right`.
fn abs_affine_integral(left: f64, right: f64, h: f64) -> f64 {
    if left * right >= 0.0 {
        0.5 * (left.abs() + right.abs()) * h
    } else {
        0.5 * h * (left * left + right * right) / (left.abs() + right.abs())
    }
}

/// Wasserstein-1 distance `∫ |F_a - F_b| dx`, exact for atomic and piecewise-constant inputs.
///
/// Between consecutive merged breakpoints `F_a - F_b` is affine, so it is sampled at the
/// left endpoint and the midpoint and integrated in closed form.
pub fn w1<'a, 'b>(a: impl Into<Measure<'a>>, b: impl Into<Measure<'b>>) -> Result<f64> {
    let fa = Cdf::new(a.into())?;
    let fb = Cdf::new(b.into())?;
    let mut points = Vec::new();
    fa.push_breakpoints(&mut points);
    fb.push_breakpoints(&mut points);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut total = 0.0;
    for w in points.windows(2) {
        let (p, q) = (w[0], w[1]);
        let h = q - p;
        let mid = p + 0.5 * h;
        let left = fa.eval(p) - fb.eval(p);
        let centre = fa.eval(mid) - fb.eval(mid);
        let right = 2.0 * centre - left;
        total += abs_affine_integral(left, right, h);
    }
    Ok(total)
}

/// Order-statistics form of W1 for equal-size empirical measures: `(1/N) Σ |a_(k) - b_(k)|`.
pub fn w1_sorted_atoms(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "order-statistics W1 needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .atoms()
        .iter()
        .zip(b.atoms())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mass, mean and variance of a measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Exact moments of the represented measure. For densities each cell is a uniform
/// distribution, which contributes `Δx²/12` to the second moment.
pub fn moments<'a>(m: impl Into<Measure<'a>>) -> Moments {
    match m.into() {
        Measure::Empirical(e) => {
            // Welford updates keep repeated atoms exact.
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for (k, &x) in e.atoms().iter().enumerate() {
                let delta = x - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (x - mean);
            }
            let variance = m2 / e.len() as f64;
            Moments {
                mass: 1.0,
                mean,
                variance,
            }
        }
        Measure::Density(d) => density_moments(d),
    }
}

pub(crate) fn density_moments(d: &DensityGrid) -> Moments {
    let grid = d.grid();
    let dx = grid.dx();
    let mass = d.mass();
    let mut first = 0.0;
    for (k, v) in d.values().iter().enumerate() {
        first += v * dx * grid.center(k);
    }
    let mean = first / mass;
    let mut second = 0.0;
    for (k, v) in d.values().iter().enumerate() {
        let c = grid.center(k) - mean;
        second += v * dx * (c * c + dx * dx / 12.0);
    }
    Moments {
        mass,
        mean,
        variance: second / mass,
    }
}
