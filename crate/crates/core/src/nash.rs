//! Open-loop Nash equilibria of the N-player game by forward-backward sweeps.
//!
//! Everything is discretized on the explicit Euler grid of the state, and the adjoint is
//! the exact reverse-mode derivative of the left-Riemann value. Writing `X_ℓ` for the
//! state and `J`, `G_i = ∇h_i` for the drift Jacobian and the cost gradient,
//!
//! ```text
//! φ^i(N_T) = 0
//! φ^i(ℓ)   = (I + Δt J(X_{ℓ+1}))ᵀ φ^i(ℓ+1) + Δt w_{ℓ+1} G_i(X_{ℓ+1}),   w_ℓ = 1{ℓ < N_T}
//! ∂V_i/∂ũ_{ℓ,i} = Δt (α(t_ℓ) ũ_{ℓ,i} + φ^i_i(ℓ))
//! ```
//!
//! This is the backward Euler sweep of `-φ' = Jᵀφ + ∇h_i`, `φ(T) = 0`, with the source
//! sampled at the right end of each interval.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::controller::{check_bound, DEFAULT_DIVERGENCE_BOUND};
use crate::error::{Error, Result};
use crate::model::{uniform_steps, uniform_time_grid, ControlProfile, ModelSpec, ParticleEnsemble, Trajectory};

/// Co-states `φ^i_j(t_ℓ)`, stored as `values[[i, j, ℓ]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    values: Array3<f64>,
    time_grid: Vec<f64>,
}

impl AdjointField {
    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    /// `φ^i_j(t_ℓ)`.
    pub fn get(&self, i: usize, j: usize, step: usize) -> f64 {
        self.values[[i, j, step]]
    }
}

/// Forward-backward sweep controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepParams {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// `θ ∈ (0, 1]`.
    pub relaxation: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
            relaxation: 0.5,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("sweep needs at least one iteration".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "sweep tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Config(format!(
                "sweep relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

fn check_profile(model: &ModelSpec, x0: &ParticleEnsemble, u: &ControlProfile) -> Result<()> {
    model.cost_grad(x0, 0)?;
    if u.n_particles() != x0.len() {
        return Err(Error::Input(format!(
            "control profile has {} particles, ensemble has {}",
            u.n_particles(),
            x0.len()
        )));
    }
    let steps = uniform_steps(model.horizon, u.dt())?;
    if steps != u.steps() || u.time_grid() != uniform_time_grid(model.horizon, steps).as_slice() {
        return Err(Error::Input(
            "control profile must live on the uniform grid of the model horizon".into(),
        ));
    }
    Ok(())
}

/// Explicit Euler forward solve `x_{ℓ+1,i} = x_{ℓ,i} + Δt (f_i(X_ℓ) + ũ_{ℓ,i})` from `t = 0`.
pub fn simulate_state(model: &ModelSpec, x0: &ParticleEnsemble, u: &ControlProfile) -> Result<Trajectory> {
    simulate_state_bounded(model, x0, u, DEFAULT_DIVERGENCE_BOUND)
}

pub fn simulate_state_bounded(
    model: &ModelSpec,
    x0: &ParticleEnsemble,
    u: &ControlProfile,
    bound: f64,
) -> Result<Trajectory> {
    check_profile(model, x0, u)?;
    simulate_from(model, x0.positions(), u, 0, bound)
}

fn simulate_from(
    model: &ModelSpec,
    start: &[f64],
    u: &ControlProfile,
    first: usize,
    bound: f64,
) -> Result<Trajectory> {
    let dt = u.dt();
    let times = u.time_grid();
    let mut states = Vec::with_capacity(u.steps() + 1 - first);
    states.push(ParticleEnsemble::from_raw(start.to_vec(), times[first]));
    for l in first..u.steps() {
        let xs = states.last().expect("at least one state").positions();
        let f = model.drift_slice(xs);
        let next: Vec<f64> = xs
            .iter()
            .zip(&f)
            .enumerate()
            .map(|(i, (&xi, &fi))| xi + dt * (fi + u.get(i, l)))
            .collect();
        check_bound(&next, l + 1, bound)?;
        states.push(ParticleEnsemble::from_raw(next, times[l + 1]));
    }
    Ok(Trajectory { dt, states })
}

/// Per-step drift Jacobians and cost-gradient matrices `G[[i, j]] = ∂_{x_j} h_i`.
struct Linearization {
    jacobians: Vec<Array2<f64>>,
    gradients: Vec<Array2<f64>>,
}

fn linearize(model: &ModelSpec, traj: &Trajectory) -> Linearization {
    let n = traj.states[0].len();
    let per_step: Vec<(Array2<f64>, Array2<f64>)> = traj
        .states
        .par_iter()
        .map(|s| {
            let xs = s.positions();
            let mut g = Array2::zeros((n, n));
            for i in 0..n {
                for (j, v) in model.cost_gradient_slice(xs, i).into_iter().enumerate() {
                    g[[i, j]] = v;
                }
            }
            (model.drift_jacobian_slice(xs), g)
        })
        .collect();
    let (jacobians, gradients) = per_step.into_iter().unzip();
    Linearization {
        jacobians,
        gradients,
    }
}

fn adjoint_from(lin: &Linearization, dt: f64, i: usize) -> Result<Array2<f64>> {
    let steps = lin.jacobians.len() - 1;
    let n = lin.jacobians[0].nrows();
    let mut phi = Array2::<f64>::zeros((n, steps + 1));
    for l in (0..steps).rev() {
        let next = l + 1;
        let jac = &lin.jacobians[next];
        let weight = if next < steps { 1.0 } else { 0.0 };
        for j in 0..n {
            let mut acc = phi[[j, next]];
            let mut transport = 0.0;
            for k in 0..n {
                transport += jac[[k, j]] * phi[[k, next]];
            }
            acc += dt * transport + dt * weight * lin.gradients[next][[i, j]];
            if !acc.is_finite() {
                return Err(Error::Numerical {
                    step: Some(l),
                    message: format!("adjoint φ^{i}_{j} is not finite"),
                });
            }
            phi[[j, l]] = acc;
        }
    }
    Ok(phi)
}

/// Adjoint slice `φ^i_·`, as `values[[j, ℓ]]`, along `traj`.
pub fn solve_adjoint(model: &ModelSpec, traj: &Trajectory, i: usize) -> Result<Array2<f64>> {
    let first = &traj.states[0];
    model.cost_grad(first, i)?;
    let lin = linearize(model, traj);
    adjoint_from(&lin, traj.dt, i)
}

fn all_adjoints(model: &ModelSpec, traj: &Trajectory) -> Result<Vec<Array2<f64>>> {
    let lin = linearize(model, traj);
    let n = traj.states[0].len();
    (0..n)
        .into_par_iter()
        .map(|i| adjoint_from(&lin, traj.dt, i))
        .collect()
}

/// Left-Riemann cost-to-go `Σ_{ℓ ≥ m} Δt ((α(t_ℓ)/2) ũ_{ℓ,i}² + h_i(X_ℓ))` of particle `i`
/// from state `y` at grid time `t = t_m`.
pub fn value(model: &ModelSpec, t: f64, y: &ParticleEnsemble, u: &ControlProfile, i: usize) -> Result<f64> {
    check_profile(model, y, u)?;
    model.cost(y, i)?;
    if !(t.is_finite() && t >= 0.0) || t > model.horizon {
        return Err(Error::Input(format!(
            "value time {t} lies outside [0, {}]",
            model.horizon
        )));
    }
    let first = (t / u.dt()).round() as usize;
    if (u.time_grid()[first] - t).abs() > 1e-12 * model.horizon.max(1.0) {
        return Err(Error::Input(format!("value time {t} is not a grid node")));
    }
    let traj = simulate_from(model, y.positions(), u, first, DEFAULT_DIVERGENCE_BOUND)?;
    Ok(value_along(model, &traj, u, first, i))
}

fn value_along(model: &ModelSpec, traj: &Trajectory, u: &ControlProfile, first: usize, i: usize) -> f64 {
    let dt = u.dt();
    let mut acc = 0.0;
    for l in first..u.steps() {
        let t = u.time_grid()[l];
        let ui = u.get(i, l);
        acc += dt * (0.5 * model.alpha.eval(t) * ui * ui + model.cost_row(traj.states[l - first].positions(), i));
    }
    acc
}

/// `g_ℓ = α(t_ℓ) ũ_{ℓ,i} + φ^i_i(t_ℓ)` for `ℓ = 0..N_T`; `Δt g_ℓ` is the exact derivative
/// of [`value`] at `t = 0` in `ũ_{ℓ,i}`.
pub fn gradient_via_adjoint(
    model: &ModelSpec,
    x0: &ParticleEnsemble,
    u: &ControlProfile,
    i: usize,
) -> Result<Vec<f64>> {
    let traj = simulate_state(model, x0, u)?;
    let phi = solve_adjoint(model, &traj, i)?;
    Ok((0..u.steps())
        .map(|l| model.alpha.eval(u.time_grid()[l]) * u.get(i, l) + phi[[i, l]])
        .collect())
}

/// Result of [`nash_sweep`]. `controls`, `trajectory` and `adjoints` are mutually consistent
/// and `residual` is measured on them.
#[derive(Debug, Clone)]
pub struct NashSolution {
    pub controls: ControlProfile,
    pub trajectory: Trajectory,
    pub adjoints: AdjointField,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Residual after each forward-backward pass.
    pub residual_history: Vec<f64>,
    /// `Σ_i V_i(0, X0)` after each forward-backward pass.
    pub merit_history: Vec<f64>,
}

/// Damped fixed-point sweep from zero controls.
pub fn nash_sweep(model: &ModelSpec, x0: &ParticleEnsemble, dt: f64, params: SweepParams) -> Result<NashSolution> {
    let u0 = ControlProfile::zeros(x0.len(), model.horizon, dt)?;
    nash_sweep_from(model, x0, u0, params)
}

/// Damped fixed-point sweep `U ← (1-θ) U + θ Û`, `Û_{ℓ,i} = -φ^i_i(t_ℓ)/α(t_ℓ)`, from `u0`.
/// Running out of iterations is reported through `converged`, not as an error.
pub fn nash_sweep_from(
    model: &ModelSpec,
    x0: &ParticleEnsemble,
    u0: ControlProfile,
    params: SweepParams,
) -> Result<NashSolution> {
    params.validate()?;
    check_profile(model, x0, &u0)?;
    let n = x0.len();
    let steps = u0.steps();
    let alphas: Vec<f64> = u0.time_grid()[..steps]
        .iter()
        .map(|&t| model.alpha.eval(t))
        .collect();
    let theta = params.relaxation;
    let mut u = u0;
    let mut residual_history = Vec::new();
    let mut merit_history = Vec::new();
    loop {
        let traj = simulate_from(model, x0.positions(), &u, 0, DEFAULT_DIVERGENCE_BOUND)?;
        let adjoints = all_adjoints(model, &traj)?;
        let mut residual: f64 = 0.0;
        for (i, phi) in adjoints.iter().enumerate() {
            for l in 0..steps {
                residual = residual.max((alphas[l] * u.get(i, l) + phi[[i, l]]).abs());
            }
        }
        residual_history.push(residual);
        merit_history.push((0..n).map(|i| value_along(model, &traj, &u, 0, i)).sum());
        let iterations = residual_history.len();
        let converged = residual <= params.tolerance;
        if converged || iterations >= params.max_iterations {
            let mut values = Array3::zeros((n, n, steps + 1));
            for (i, phi) in adjoints.iter().enumerate() {
                values.slice_mut(ndarray::s![i, .., ..]).assign(phi);
            }
            let adjoints = AdjointField {
                values,
                time_grid: u.time_grid().to_vec(),
            };
            return Ok(NashSolution {
                controls: u,
                trajectory: traj,
                adjoints,
                residual,
                converged,
                iterations,
                residual_history,
                merit_history,
            });
        }
        let values = u.values_mut();
        for (i, phi) in adjoints.iter().enumerate() {
            for l in 0..steps {
                let proposal = -phi[[i, l]] / alphas[l];
                values[[i, l]] = (1.0 - theta) * values[[i, l]] + theta * proposal;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{integrate_brs, MpcScheme};
    use crate::model::{Alpha, PairKernel};
    use approx::assert_abs_diff_eq;

    fn ens(xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::initial(xs.to_vec()).unwrap()
    }

    fn no_drift(n: usize, horizon: f64) -> ModelSpec {
        ModelSpec::new(
            PairKernel::Constant(0.0),
            PairKernel::Quadratic { scale: 1.0 },
            Alpha::Constant(1.0),
            n,
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn params_validate() {
        assert!(SweepParams::default().validate().is_ok());
        assert!(SweepParams { relaxation: 0.0, ..Default::default() }.validate().is_err());
        assert!(SweepParams { relaxation: 1.5, ..Default::default() }.validate().is_err());
        assert!(SweepParams { tolerance: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn constant_trajectory_adjoint() {
        let m = no_drift(2, 1.0);
        let u = ControlProfile::zeros(2, 1.0, 0.01).unwrap();
        let traj = simulate_state(&m, &ens(&[0.0, 1.0]), &u).unwrap();
        let phi = solve_adjoint(&m, &traj, 0).unwrap();
        let dt = 0.01;
        for l in 0..=100 {
            let remaining = (100usize.saturating_sub(l + 1)) as f64 * dt;
            assert_abs_diff_eq!(phi[[0, l]], -remaining, epsilon = 1e-12);
            assert_abs_diff_eq!(phi[[1, l]], remaining, epsilon = 1e-12);
        }
        assert_eq!(phi[[0, 100]], 0.0);
    }

    #[test]
    fn constant_cost_zero_adjoint() {
        let m = ModelSpec::new(
            PairKernel::Constant(1.0),
            PairKernel::Constant(0.7),
            Alpha::Constant(1.0),
            3,
            1.0,
        )
        .unwrap();
        let u = ControlProfile::from_fn(3, 1.0, 0.1, |i, l| (i + l) as f64 * 0.1).unwrap();
        let traj = simulate_state(&m, &ens(&[0.0, 0.5, 1.0]), &u).unwrap();
        for i in 0..3 {
            assert!(solve_adjoint(&m, &traj, i).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn value_examples() {
        let m = ModelSpec::new(
            PairKernel::Constant(0.0),
            PairKernel::Constant(0.3),
            Alpha::Constant(2.0),
            2,
            1.0,
        )
        .unwrap();
        let u = ControlProfile::from_fn(2, 1.0, 0.1, |_, _| 0.5).unwrap();
        let y = ens(&[0.0, 1.0]);
        assert_abs_diff_eq!(value(&m, 0.0, &y, &u, 0).unwrap(), 2.0 * 0.25 / 2.0 + 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(value(&m, 0.4, &y, &u, 0).unwrap(), 0.6 * (0.25 + 0.3), epsilon = 1e-14);
        assert_eq!(value(&m, 1.0, &y, &u, 0).unwrap(), 0.0);
        assert!(value(&m, 1.1, &y, &u, 0).is_err());
        assert!(value(&m, 0.45, &y, &u, 0).is_err());
    }

    #[test]
    fn short_horizon_value_is_dt_times_cost() {
        let dt = 0.01;
        let m = ModelSpec::bounded_confidence(3, dt, 0.8).unwrap();
        let y = ens(&[0.0, 0.3, 0.9]);
        let sol = nash_sweep(&m, &y, dt, SweepParams::default()).unwrap();
        assert!(sol.converged);
        for i in 0..3 {
            let v = value(&m, 0.0, &y, &sol.controls, i).unwrap();
            assert_abs_diff_eq!(v / dt, m.cost(&y, i).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_cost_sweep_is_immediate() {
        let m = ModelSpec::new(
            PairKernel::Constant(1.0),
            PairKernel::Constant(0.0),
            Alpha::Constant(1.0),
            3,
            1.0,
        )
        .unwrap();
        let sol = nash_sweep(&m, &ens(&[0.0, 0.2, 1.0]), 0.05, SweepParams::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.residual, 0.0);
        assert!(sol.controls.values().iter().all(|u| *u == 0.0));
        assert!(sol.adjoints.values().slice(ndarray::s![.., .., 20]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn brs_profile_replays_bitwise() {
        let m = ModelSpec::bounded_confidence(5, 0.5, 0.5).unwrap();
        let x0 = ens(&[0.0, 0.1, 0.45, 0.7, 1.0]);
        let run = integrate_brs(&m, &x0, 0.01, MpcScheme::Taylor).unwrap();
        let replay = simulate_state(&m, &x0, &run.controls).unwrap();
        assert_eq!(replay, run.trajectory);
    }

    #[test]
    fn uncontrolled_consensus_gap() {
        let m = ModelSpec::consensus(2, 1.0).unwrap();
        let u = ControlProfile::zeros(2, 1.0, 1e-3).unwrap();
        let traj = simulate_state(&m, &ens(&[0.0, 1.0]), &u).unwrap();
        let last = traj.last().positions();
        assert!((last[1] - last[0] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn non_convergence_is_reported() {
        let m = ModelSpec::consensus(2, 1.0).unwrap();
        let params = SweepParams {
            max_iterations: 3,
            ..Default::default()
        };
        let sol = nash_sweep(&m, &ens(&[0.0, 1.0]), 0.01, params).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        assert_eq!(sol.residual_history.len(), 3);
    }
}
