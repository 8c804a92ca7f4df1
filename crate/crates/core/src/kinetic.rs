//! Best-reply kinetic equation `∂_t m + ∂_x(m c) = 0` with
//! `c(x) = 𝐟(x, m) - ∂_x 𝐡(x, m) / α(t)`, by first-order upwind finite volumes.
//!
//! Velocities live on the `M + 1` cell faces. The two boundary faces carry zero flux, so
//! mass neither enters nor leaves the domain.

use crate::controller::best_reply;
use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::model::{map_rows, uniform_steps, uniform_time_grid, ModelSpec};

/// Largest admissible Courant number `Δt |c| / Δx` on an interior face.
pub const CFL_LIMIT: f64 = 0.9;

/// Densities `m(t_ℓ)` on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub slices: Vec<DensityGrid>,
    /// Total negative mass removed by clipping over the run.
    pub clipped_mass: f64,
}

impl DensityTrajectory {
    pub fn last(&self) -> &DensityGrid {
        self.slices.last().expect("trajectories hold at least the initial slice")
    }

    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }
}

/// Face velocity `𝐟 - ∂_x v / α` for a given value gradient.
#[inline]
pub(crate) fn face_velocity(drift: f64, value_grad: f64, alpha: f64) -> f64 {
    drift + best_reply(value_grad, alpha)
}

/// `c` at every face `x_{k-1/2}`, `k = 0..=M`, with the value gradient supplied per face.
pub(crate) fn faces_with(
    model: &ModelSpec,
    m: &DensityGrid,
    alpha: f64,
    value_grad: impl Fn(usize, f64) -> f64 + Sync + Send,
) -> Vec<f64> {
    let grid = *m.grid();
    map_rows(grid.cells() + 1, |k| {
        let x = grid.face(k);
        face_velocity(model.mean_field_drift(x, m), value_grad(k, x), alpha)
    })
}

/// Best-reply face velocities `𝐟(x, m) - ∂_x 𝐡(x, m) / α(t)`.
pub fn velocity_field(model: &ModelSpec, m: &DensityGrid, t: f64) -> Result<Vec<f64>> {
    let alpha = model.alpha.positive_at(t)?;
    Ok(faces_with(model, m, alpha, |_, x| model.mean_field_cost_grad(x, m)))
}

/// Outcome of one upwind step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpwindStep {
    pub density: DensityGrid,
    /// Negative mass set to zero after the update.
    pub clipped_mass: f64,
}

/// Checks `Δt |c| / Δx ≤ 0.9` on every interior face.
pub fn check_cfl(faces: &[f64], dx: f64, dt: f64) -> Result<()> {
    let last = faces.len() - 1;
    for (k, c) in faces.iter().enumerate().take(last).skip(1) {
        let courant = dt * c.abs() / dx;
        if !(courant <= CFL_LIMIT) {
            return Err(Error::Cfl {
                step: None,
                face: k,
                courant,
                limit: CFL_LIMIT,
            });
        }
    }
    Ok(())
}

/// Conservative update `m_k ← m_k - (Δt/Δx)(F_{k+1/2} - F_{k-1/2})` with
/// `F = c⁺ m_left + c⁻ m_right` and zero flux through both boundary faces.
pub fn step_upwind(m: &DensityGrid, faces: &[f64], dt: f64) -> Result<UpwindStep> {
    let grid = *m.grid();
    let cells = grid.cells();
    if faces.len() != cells + 1 {
        return Err(Error::Input(format!(
            "{} face velocities for {cells} cells",
            faces.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {dt}")));
    }
    let dx = grid.dx();
    check_cfl(faces, dx, dt)?;
    let values = m.values();
    let flux = |k: usize| -> f64 {
        if k == 0 || k == cells {
            0.0
        } else {
            let c = faces[k];
            c.max(0.0) * values[k - 1] + c.min(0.0) * values[k]
        }
    };
    let ratio = dt / dx;
    let mut next = Vec::with_capacity(cells);
    let mut clipped = 0.0;
    let mut left = flux(0);
    for (k, &v) in values.iter().enumerate() {
        let right = flux(k + 1);
        let mut updated = v - ratio * (right - left);
        if updated < 0.0 {
            clipped -= updated * dx;
            updated = 0.0;
        }
        next.push(updated);
        left = right;
    }
    Ok(UpwindStep {
        density: DensityGrid::from_raw(grid, next),
        clipped_mass: clipped,
    })
}

/// Solves the best-reply kinetic equation on `[0, T]` from `m0`.
pub fn solve_kinetic(model: &ModelSpec, m0: &DensityGrid, dt: f64) -> Result<DensityTrajectory> {
    transport(model, m0, dt, |_, m, t| velocity_field(model, m, t))
}

/// Explicit upwind time stepping with velocities recomputed from the current slice.
pub(crate) fn transport(
    model: &ModelSpec,
    m0: &DensityGrid,
    dt: f64,
    mut faces_at: impl FnMut(usize, &DensityGrid, f64) -> Result<Vec<f64>>,
) -> Result<DensityTrajectory> {
    let steps = uniform_steps(model.horizon, dt)?;
    let times = uniform_time_grid(model.horizon, steps);
    let dt = model.horizon / steps as f64;
    let mut slices = Vec::with_capacity(steps + 1);
    slices.push(m0.clone());
    let mut clipped_mass = 0.0;
    for l in 0..steps {
        let current = &slices[l];
        let faces = faces_at(l, current, times[l]).map_err(|e| e.at_step(l))?;
        let step = step_upwind(current, &faces, dt).map_err(|e| e.at_step(l))?;
        clipped_mass += step.clipped_mass;
        slices.push(step.density);
    }
    Ok(DensityTrajectory {
        dt,
        times,
        slices,
        clipped_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceGrid;
    use crate::measures::moments;
    use crate::model::{Alpha, PairKernel};
    use approx::assert_abs_diff_eq;

    fn bump(grid: SpaceGrid) -> DensityGrid {
        DensityGrid::from_density_fn(grid, 4, |x| (1.0 - (2.0 * x - 1.0).powi(2)).max(0.0)).unwrap()
    }

    #[test]
    fn consensus_velocity_is_affine() {
        let grid = SpaceGrid::new(-0.5, 1.5, 200).unwrap();
        let m = bump(grid);
        let mu = moments(&m).mean;
        let model = ModelSpec::consensus(2, 1.0).unwrap();
        let faces = velocity_field(&model, &m, 0.0).unwrap();
        for (k, c) in faces.iter().enumerate() {
            assert_abs_diff_eq!(*c, 2.0 * (mu - grid.face(k)), epsilon = 1e-12);
        }
        for k in 0..=200 {
            assert_abs_diff_eq!(faces[k], -faces[200 - k], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_forces_zero_velocity() {
        let grid = SpaceGrid::new(0.0, 1.0, 16).unwrap();
        let m = DensityGrid::uniform(grid, 0.0, 1.0).unwrap();
        let model = ModelSpec::new(
            PairKernel::Constant(0.0),
            PairKernel::Constant(1.0),
            Alpha::Constant(1.0),
            2,
            1.0,
        )
        .unwrap();
        assert!(velocity_field(&model, &m, 0.0).unwrap().iter().all(|c| *c == 0.0));
        let step = step_upwind(&m, &vec![0.0; 17], 0.1).unwrap();
        assert_eq!(step.density, m);
    }

    #[test]
    fn step_conserves_mass_and_reports_cfl() {
        let grid = SpaceGrid::new(0.0, 1.0, 64).unwrap();
        let m = bump(grid);
        let faces: Vec<f64> = grid.faces().iter().map(|x| (7.0 * x).sin()).collect();
        let step = step_upwind(&m, &faces, 0.01).unwrap();
        assert_abs_diff_eq!(step.density.mass(), m.mass(), epsilon = 1e-14);
        match step_upwind(&m, &faces, 0.05) {
            Err(Error::Cfl { face, courant, .. }) => {
                assert!(courant > CFL_LIMIT);
                assert!(face > 0 && face < 64);
            }
            other => panic!("expected a CFL error, got {other:?}"),
        }
    }

    #[test]
    fn single_cell_bump_translates() {
        let grid = SpaceGrid::new(0.0, 1.0, 50).unwrap();
        let mut masses = vec![0.0; 50];
        masses[10] = 1.0;
        let m = DensityGrid::from_cell_masses(grid, &masses).unwrap();
        let faces = vec![0.0].into_iter().chain(vec![1.0; 49]).chain(vec![0.0]).collect::<Vec<_>>();
        // Courant number one half: two steps move the centre of mass by one cell.
        let dt = 0.5 * grid.dx();
        let s1 = step_upwind(&m, &faces, dt).unwrap().density;
        let s2 = step_upwind(&s1, &faces, dt).unwrap().density;
        let moved = moments(&s2).mean - moments(&m).mean;
        assert_abs_diff_eq!(moved, grid.dx(), epsilon = 1e-14);
    }

    #[test]
    fn solve_reports_step_of_cfl_failure() {
        let grid = SpaceGrid::new(-1.0, 2.0, 300).unwrap();
        let m0 = DensityGrid::uniform(grid, 0.0, 1.0).unwrap();
        let model = ModelSpec::consensus(2, 1.0).unwrap();
        let err = solve_kinetic(&model, &m0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Cfl { step: Some(0), .. }));
    }

    #[test]
    fn consensus_moments() {
        let grid = SpaceGrid::new(-0.25, 1.25, 128).unwrap();
        let m0 = bump(grid);
        let model = ModelSpec::consensus(2, 0.5).unwrap();
        let traj = solve_kinetic(&model, &m0, 0.005).unwrap();
        let mut prev = moments(&m0);
        for s in &traj.slices[1..] {
            let now = moments(s);
            assert!(now.variance < prev.variance);
            assert_abs_diff_eq!(now.mean, 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(now.mass, 1.0, epsilon = 1e-12);
            prev = now;
        }
        assert_eq!(traj.clipped_mass, 0.0);
        // Symmetry about the centre.
        let last = traj.last().values();
        for k in 0..128 {
            assert_abs_diff_eq!(last[k], last[127 - k], epsilon = 1e-12);
        }
    }
}
