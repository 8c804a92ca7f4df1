//! Uniform 1D finite-volume grids and cell-averaged probability densities.

use crate::error::{Error, Result};

/// Mass tolerance accepted when a density is handed in from outside.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Uniform partition of `[x_min, x_max]` into `cells` finite volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    cells: usize,
}

impl SpaceGrid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::Input(format!(
                "grid bounds must be finite with x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if cells < Self::MIN_CELLS {
            return Err(Error::Input(format!(
                "grid needs at least {} cells, got {cells}",
                Self::MIN_CELLS
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            cells,
        })
    }

    /// Grid covering `[lo, hi]` plus a margin of a quarter of its width on each side.
    pub fn covering(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        let margin = 0.25 * (hi - lo);
        Self::new(lo - margin, hi + margin, cells)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    /// Center of cell `k`.
    pub fn center(&self, k: usize) -> f64 {
        self.x_min + (k as f64 + 0.5) * self.dx()
    }

    /// Left face of cell `k`; `face(cells)` is the right boundary.
    pub fn face(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|k| self.center(k)).collect()
    }

    pub fn faces(&self) -> Vec<f64> {
        (0..=self.cells).map(|k| self.face(k)).collect()
    }

    /// Index of the cell containing `x`, if any. The right boundary belongs to the last cell.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(self.x_min..=self.x_max).contains(&x) {
            return None;
        }
        let k = ((x - self.x_min) / self.dx()).floor() as usize;
        Some(k.min(self.cells - 1))
    }
}

/// Cell averages of a probability density on a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    grid: SpaceGrid,
    values: Vec<f64>,
}

impl DensityGrid {
    /// Validates non-negativity and unit mass (within [`MASS_TOLERANCE`]).
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::Input(format!(
                "density has {} cell values for a grid of {} cells",
                values.len(),
                grid.cells()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input(format!(
                "density value {} in cell {k} is negative or non-finite",
                values[k]
            )));
        }
        let density = Self { grid, values };
        let mass = density.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Input(format!("density has mass {mass}, expected 1")));
        }
        Ok(density)
    }

    /// Builds a density from non-negative per-cell masses, normalizing the total to one.
    pub fn from_cell_masses(grid: SpaceGrid, masses: &[f64]) -> Result<Self> {
        if masses.len() != grid.cells() {
            return Err(Error::Input(format!(
                "{} cell masses for a grid of {} cells",
                masses.len(),
                grid.cells()
            )));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Input("cell masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::Input("cell masses sum to zero".into()));
        }
        let dx = grid.dx();
        let values = masses.iter().map(|m| m / (total * dx)).collect();
        Ok(Self { grid, values })
    }

    /// Cell averages of `density` by composite midpoint quadrature with `samples` points per cell,
    /// renormalized to unit mass.
    pub fn from_density_fn(
        grid: SpaceGrid,
        samples: usize,
        density: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let samples = samples.max(1);
        let h = grid.dx() / samples as f64;
        let masses: Vec<f64> = (0..grid.cells())
            .map(|k| {
                let left = grid.face(k);
                (0..samples)
                    .map(|s| density(left + (s as f64 + 0.5) * h) * h)
                    .sum()
            })
            .collect();
        Self::from_cell_masses(grid, &masses)
    }

    /// Uniform probability density on `[a, b]`, with partial cells weighted by overlap.
    pub fn uniform(grid: SpaceGrid, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Input(format!("uniform support [{a}, {b}] is empty")));
        }
        let masses: Vec<f64> = (0..grid.cells())
            .map(|k| {
                let lo = grid.face(k).max(a);
                let hi = grid.face(k + 1).min(b);
                (hi - lo).max(0.0)
            })
            .collect();
        Self::from_cell_masses(grid, &masses)
    }

    /// Histogram projection of particle positions: mass `1/N` into the containing cell.
    pub fn histogram(grid: SpaceGrid, positions: &[f64]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Input("cannot project an empty ensemble".into()));
        }
        let mut counts = vec![0.0; grid.cells()];
        for (i, &x) in positions.iter().enumerate() {
            let k = grid.locate(x).ok_or_else(|| {
                Error::Domain(format!(
                    "particle {i} at {x} lies outside the grid [{}, {}]",
                    grid.x_min(),
                    grid.x_max()
                ))
            })?;
            counts[k] += 1.0;
        }
        Self::from_cell_masses(grid, &counts)
    }

    /// Solver-internal constructor; callers are responsible for the invariants.
    pub(crate) fn from_raw(grid: SpaceGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.cells());
        Self { grid, values }
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total mass `Σ m_k Δx`, summed in ascending cell order.
    pub fn mass(&self) -> f64 {
        let dx = self.grid.dx();
        self.values.iter().map(|v| v * dx).sum()
    }

    /// `Σ |m_k - n_k| Δx`. Both densities must share a grid.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Input("L1 distance needs densities on the same grid".into()));
        }
        let dx = self.grid.dx();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs() * dx)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SpaceGrid::new(1.0, 1.0, 16).is_err());
        assert!(SpaceGrid::new(0.0, 1.0, 4).is_err());
        assert!(SpaceGrid::new(f64::NAN, 1.0, 16).is_err());
    }

    #[test]
    fn covering_adds_quarter_margin() {
        let g = SpaceGrid::covering(0.0, 1.0, 64).unwrap();
        assert_eq!(g.x_min(), -0.25);
        assert_eq!(g.x_max(), 1.25);
        assert_relative_eq!(g.dx(), 1.5 / 64.0);
    }

    #[test]
    fn locate_includes_right_boundary() {
        let g = SpaceGrid::new(0.0, 1.0, 10).unwrap();
        assert_eq!(g.locate(0.0), Some(0));
        assert_eq!(g.locate(0.05), Some(0));
        assert_eq!(g.locate(1.0), Some(9));
        assert_eq!(g.locate(1.0 + 1e-9), None);
    }

    #[test]
    fn density_validation() {
        let g = SpaceGrid::new(0.0, 1.0, 8).unwrap();
        assert!(DensityGrid::new(g, vec![1.0; 8]).is_ok());
        assert!(DensityGrid::new(g, vec![2.0; 8]).is_err());
        let mut neg = vec![1.0; 8];
        neg[0] = -0.5;
        neg[1] = 1.5;
        assert!(DensityGrid::new(g, neg).is_err());
    }

    #[test]
    fn uniform_weights_partial_cells() {
        let g = SpaceGrid::new(0.0, 1.0, 8).unwrap();
        let m = DensityGrid::uniform(g, 0.0625, 0.5625).unwrap();
        assert_relative_eq!(m.mass(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.values()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.values()[1], 2.0, epsilon = 1e-15);
        assert_eq!(m.values()[7], 0.0);
    }

    #[test]
    fn histogram_rejects_outside_particles() {
        let g = SpaceGrid::new(0.0, 1.0, 8).unwrap();
        assert!(DensityGrid::histogram(g, &[0.5, 1.5]).is_err());
        let m = DensityGrid::histogram(g, &[0.01, 0.02, 0.99, 0.5]).unwrap();
        assert_relative_eq!(m.values()[0], 2.0 * 8.0 / 4.0);
    }
}
