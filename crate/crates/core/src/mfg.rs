//! Mean-field game system
//!
//! ```text
//! ∂_t v + 𝐟(x, m) ∂_x v - (∂_x v)² / (2α) = -𝐡(x, m),   v(T, ·) = 0
//! ∂_t m + ∂_x((𝐟(x, m) - ∂_x v / α) m) = 0,            m(0, ·) = m0
//! ```
//!
//! solved by damped Picard iteration between a backward monotone scheme for `v` and the
//! upwind transport of the kinetic module for `m`, plus the receding-horizon closure that
//! replaces `v(τ, ·)` by `𝐡(·, m(τ))` on every step.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, SpaceGrid};
use crate::kinetic::{faces_with, transport, DensityTrajectory, CFL_LIMIT};
use crate::model::{map_rows, uniform_steps, ModelSpec};

/// Nodal values `v(t_ℓ, x_k)` at cell centers, stored as `values[[ℓ, k]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    grid: SpaceGrid,
    dt: f64,
    times: Vec<f64>,
    values: Array2<f64>,
}

impl ValueGrid {
    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Two-point difference `(v_k - v_{k-1}) / Δx` at interior face `k` of slice `step`,
    /// zero on the boundary faces.
    pub fn face_gradient(&self, step: usize, face: usize) -> f64 {
        if face == 0 || face == self.grid.cells() {
            0.0
        } else {
            (self.values[[step, face]] - self.values[[step, face - 1]]) / self.grid.dx()
        }
    }

    /// Central difference of `v` at node `k`, one-sided at the ends.
    pub fn node_gradient(&self, step: usize, k: usize) -> f64 {
        let last = self.grid.cells() - 1;
        let dx = self.grid.dx();
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(last));
        (self.values[[step, hi]] - self.values[[step, lo]]) / ((hi - lo) as f64 * dx)
    }
}

/// Damped Picard iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardParams {
    pub max_iterations: usize,
    /// Bound on the largest per-slice L1 change between iterates.
    pub tolerance: f64,
    /// `θ ∈ (0, 1]`.
    pub damping: f64,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            damping: 0.5,
        }
    }
}

impl PicardParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("Picard iteration needs at least one iteration".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "Picard tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "Picard damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

fn check_time_grid(model: &ModelSpec, steps: usize, dt: f64) -> Result<()> {
    if uniform_steps(model.horizon, dt)? != steps {
        return Err(Error::Input(format!(
            "trajectory of {steps} steps of {dt} does not cover the horizon {}",
            model.horizon
        )));
    }
    Ok(())
}

/// Backward solve of the HJB equation along the density path `m_traj`.
///
/// Each step is explicit in the later slice:
/// `v_ℓ = v_{ℓ+1} - Δt (Ĥ(p⁻, p⁺) - 𝐡(x, m_{ℓ+1}))` with one-sided differences `p^±`
/// (zero beyond the boundary), a local Lax-Friedrichs flux for `p²/(2α)` with viscosity
/// `σ = max|p|/α`, and `-𝐟 p` upwinded by the sign of `𝐟`. The scheme is monotone when
/// `Δt (σ + |𝐟|) / Δx ≤ 0.9` at every node, which is enforced.
pub fn hjb_backward(model: &ModelSpec, m_traj: &DensityTrajectory) -> Result<ValueGrid> {
    let steps = m_traj.steps();
    let dt = m_traj.dt;
    check_time_grid(model, steps, dt)?;
    let grid = *m_traj.slices[0].grid();
    let cells = grid.cells();
    let dx = grid.dx();
    let mut values = Array2::<f64>::zeros((steps + 1, cells));
    let mut pminus = vec![0.0f64; cells];
    let mut pplus = vec![0.0f64; cells];
    for l in (0..steps).rev() {
        let m = &m_traj.slices[l + 1];
        let alpha = model.alpha.positive_at(m_traj.times[l + 1])?;
        let fields = map_rows(cells, |k| {
            let x = grid.center(k);
            (model.mean_field_drift(x, m), model.mean_field_cost(x, m))
        });
        let next = values.row(l + 1).to_owned();
        let mut sigma: f64 = 0.0;
        for k in 0..cells {
            pminus[k] = if k == 0 { 0.0 } else { (next[k] - next[k - 1]) / dx };
            pplus[k] = if k + 1 == cells { 0.0 } else { (next[k + 1] - next[k]) / dx };
            sigma = sigma.max(pminus[k].abs()).max(pplus[k].abs());
        }
        sigma /= alpha;
        let mut row = values.row_mut(l);
        for k in 0..cells {
            let (f, h) = fields[k];
            let courant = dt * (sigma + f.abs()) / dx;
            if !(courant <= CFL_LIMIT) {
                return Err(Error::Cfl {
                    step: Some(l),
                    face: k,
                    courant,
                    limit: CFL_LIMIT,
                });
            }
            let (pm, pp) = (pminus[k], pplus[k]);
            let mean = 0.5 * (pm + pp);
            let quadratic = mean * mean / (2.0 * alpha) - 0.5 * sigma * (pp - pm);
            let advection = -(f.max(0.0) * pp + f.min(0.0) * pm);
            let updated = next[k] - dt * (quadratic + advection - h);
            if !updated.is_finite() {
                return Err(Error::Numerical {
                    step: Some(l),
                    message: format!("value at node {k} is not finite"),
                });
            }
            row[k] = updated;
        }
    }
    Ok(ValueGrid {
        grid,
        dt,
        times: m_traj.times.clone(),
        values,
    })
}

/// Forward transport of `m0` with velocity `𝐟(x, m) - ∂_x v / α` at the faces.
pub fn fp_forward(model: &ModelSpec, v: &ValueGrid, m0: &DensityGrid) -> Result<DensityTrajectory> {
    if v.grid() != m0.grid() {
        return Err(Error::Input("value and density grids differ".into()));
    }
    check_time_grid(model, v.steps(), v.dt())?;
    transport(model, m0, v.dt(), |l, m, t| {
        let alpha = model.alpha.positive_at(t)?;
        Ok(faces_with(model, m, alpha, |k, _| v.face_gradient(l, k)))
    })
}

fn zero_value(grid: SpaceGrid, model: &ModelSpec, dt: f64) -> Result<ValueGrid> {
    let steps = uniform_steps(model.horizon, dt)?;
    let times = crate::model::uniform_time_grid(model.horizon, steps);
    Ok(ValueGrid {
        grid,
        dt: model.horizon / steps as f64,
        times,
        values: Array2::zeros((steps + 1, grid.cells())),
    })
}

/// Converged (or last) iterate of [`mfg_fixed_point`].
#[derive(Debug, Clone)]
pub struct MfgSolution {
    /// `v^k = hjb_backward(m^{k-1})` of the final iteration.
    pub value: ValueGrid,
    pub density: DensityTrajectory,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Damped Picard iteration from `m⁰ =` transport by `𝐟` alone:
/// `v^k = hjb_backward(m^{k-1})`, `m̂ = fp_forward(v^k)`, `m^k = (1-θ) m^{k-1} + θ m̂`,
/// each slice renormalized. The residual is `max_ℓ ‖m^k_ℓ - m^{k-1}_ℓ‖_1`.
pub fn mfg_fixed_point(
    model: &ModelSpec,
    m0: &DensityGrid,
    dt: f64,
    params: PicardParams,
) -> Result<MfgSolution> {
    params.validate()?;
    let theta = params.damping;
    let zero = zero_value(*m0.grid(), model, dt)?;
    let mut density = fp_forward(model, &zero, m0)?;
    let mut residual_history = Vec::new();
    loop {
        let value = hjb_backward(model, &density)?;
        let proposal = fp_forward(model, &value, m0)?;
        let mut residual: f64 = 0.0;
        let clipped_mass = proposal.clipped_mass;
        let mut slices = Vec::with_capacity(density.slices.len());
        slices.push(m0.clone());
        for (old, new) in density.slices.iter().zip(&proposal.slices).skip(1) {
            let mixed: Vec<f64> = old
                .values()
                .iter()
                .zip(new.values())
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect();
            let mixed = DensityGrid::from_raw(*m0.grid(), mixed);
            let mass = mixed.mass();
            let mixed = DensityGrid::from_raw(
                *m0.grid(),
                mixed.into_values().into_iter().map(|v| v / mass).collect(),
            );
            residual = residual.max(mixed.l1_distance(old)?);
            slices.push(mixed);
        }
        density = DensityTrajectory {
            dt: proposal.dt,
            times: proposal.times,
            slices,
            clipped_mass,
        };
        residual_history.push(residual);
        let iterations = residual_history.len();
        let converged = residual <= params.tolerance;
        if converged || iterations >= params.max_iterations {
            return Ok(MfgSolution {
                value,
                density,
                residual,
                converged,
                iterations,
                residual_history,
            });
        }
    }
}

/// Receding-horizon closure: on each step `v(τ, x) = 𝐡(x, m(τ))`, whose exact gradient
/// `∂_x 𝐡(x, m(τ))` drives the one-step transport.
pub fn mpc_mfg_closure(model: &ModelSpec, m0: &DensityGrid, dt: f64) -> Result<DensityTrajectory> {
    transport(model, m0, dt, |_, m, t| {
        let alpha = model.alpha.positive_at(t)?;
        let short_horizon_value_gradient = |x: f64| model.mean_field_cost_grad(x, m);
        Ok(faces_with(model, m, alpha, |_, x| short_horizon_value_gradient(x)))
    })
}

/// Inner time steps used to resolve the single horizon of [`short_horizon_gap`].
pub const GAP_SUBSTEPS: usize = 32;

/// Solves the MFG system on the single horizon `[0, Δt]` and returns
/// `sup_x |v(0, x) / Δt - 𝐡(x, m0)|`, the discrepancy between the game's short-horizon
/// value per unit time and the running cost used by the receding-horizon closure.
pub fn short_horizon_gap(model: &ModelSpec, m0: &DensityGrid, dt: f64) -> Result<f64> {
    short_horizon_gap_with(model, m0, dt, PicardParams::default())
}

pub fn short_horizon_gap_with(
    model: &ModelSpec,
    m0: &DensityGrid,
    dt: f64,
    params: PicardParams,
) -> Result<f64> {
    let short = model.clone().with_horizon(dt)?;
    let solution = mfg_fixed_point(&short, m0, dt / GAP_SUBSTEPS as f64, params)?;
    if !solution.converged {
        return Err(Error::Numerical {
            step: None,
            message: format!(
                "short-horizon MFG did not converge (residual {:e} after {} iterations)",
                solution.residual, solution.iterations
            ),
        });
    }
    let grid = *m0.grid();
    let v0 = solution.value.values().row(0);
    let gap = (0..grid.cells())
        .map(|k| (v0[k] / dt - model.mean_field_cost(grid.center(k), m0)).abs())
        .fold(0.0, f64::max);
    Ok(gap)
}

/// `Σ_ℓ Δt Σ_k ((α/2) u_{ℓ,k}² + 𝐡(x_k, m_ℓ)) m_{ℓ,k} Δx` for nodal feedback controls
/// `control(ℓ, k)`, left Riemann in time.
pub fn total_cost(
    model: &ModelSpec,
    density: &DensityTrajectory,
    control: impl Fn(usize, usize) -> f64,
) -> f64 {
    let grid = *density.slices[0].grid();
    let dx = grid.dx();
    let mut acc = 0.0;
    for l in 0..density.steps() {
        let m = &density.slices[l];
        let alpha = model.alpha.eval(density.times[l]);
        let mut slice = 0.0;
        for (k, &mk) in m.values().iter().enumerate() {
            let u = control(l, k);
            slice += (0.5 * alpha * u * u + model.mean_field_cost(grid.center(k), m)) * mk * dx;
        }
        acc += density.dt * slice;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::solve_kinetic;
    use crate::model::{Alpha, PairKernel};
    use approx::assert_abs_diff_eq;

    fn grid() -> SpaceGrid {
        SpaceGrid::new(-0.25, 1.25, 64).unwrap()
    }

    fn bump() -> DensityGrid {
        DensityGrid::from_density_fn(grid(), 4, |x| (1.0 - (2.0 * x - 1.0).powi(2)).max(0.0)).unwrap()
    }

    fn kernels(p: PairKernel, phi: PairKernel, horizon: f64) -> ModelSpec {
        ModelSpec::new(p, phi, Alpha::Constant(1.0), 2, horizon).unwrap()
    }

    #[test]
    fn zero_cost_zero_value() {
        let model = kernels(PairKernel::Constant(1.0), PairKernel::Constant(0.0), 0.5);
        let traj = solve_kinetic(&model, &bump(), 0.01).unwrap();
        let v = hjb_backward(&model, &traj).unwrap();
        assert!(v.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn constant_cost_linear_value() {
        let model = kernels(PairKernel::Constant(0.0), PairKernel::Constant(0.7), 0.5);
        let traj = solve_kinetic(&model, &bump(), 0.01).unwrap();
        let v = hjb_backward(&model, &traj).unwrap();
        for (l, t) in v.times().iter().enumerate() {
            for k in 0..64 {
                assert_abs_diff_eq!(v.values()[[l, k]], 0.7 * (0.5 - t), epsilon = 1e-12);
            }
        }
        let forward = fp_forward(&model, &v, &bump()).unwrap();
        assert_eq!(forward, traj);
    }

    #[test]
    fn terminal_slice_is_zero() {
        let model = ModelSpec::consensus(2, 0.2).unwrap();
        let traj = solve_kinetic(&model, &bump(), 0.01).unwrap();
        let v = hjb_backward(&model, &traj).unwrap();
        assert!(v.values().row(v.steps()).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_cost_fixed_point_is_immediate() {
        let model = kernels(PairKernel::Constant(1.0), PairKernel::Constant(0.0), 0.3);
        let sol = mfg_fixed_point(&model, &bump(), 0.01, PicardParams::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.value.values().iter().all(|x| *x == 0.0));
        let frozen = solve_kinetic(
            &kernels(PairKernel::Constant(1.0), PairKernel::Constant(0.0), 0.3),
            &bump(),
            0.01,
        )
        .unwrap();
        for (a, b) in sol.density.slices.iter().zip(&frozen.slices) {
            assert!(a.l1_distance(b).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn closure_matches_kinetic_bitwise() {
        let model = ModelSpec::bounded_confidence(2, 0.3, 0.4).unwrap();
        let a = mpc_mfg_closure(&model, &bump(), 0.005).unwrap();
        let b = solve_kinetic(&model, &bump(), 0.005).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gap_vanishes_without_cost() {
        let model = kernels(PairKernel::Constant(1.0), PairKernel::Constant(0.0), 1.0);
        assert_eq!(short_horizon_gap(&model, &bump(), 0.05).unwrap(), 0.0);
    }

    #[test]
    fn picard_params_validate() {
        assert!(PicardParams::default().validate().is_ok());
        assert!(PicardParams { damping: 0.0, ..Default::default() }.validate().is_err());
        assert!(PicardParams { tolerance: -1.0, ..Default::default() }.validate().is_err());
    }
}
