//! Best-reply control, the one-step MPC subproblem, and the controlled particle integrator.
//!
//! On `[t, t + Δt)` each particle applies the constant control minimizing
//!
//! ```text
//! J_i(u) = h_i(X̄) + Δt ∂_{x_i} h_i(X̄) (f_i(X̄) + u) + Δt α(t + Δt) u² / 2
//! ```
//!
//! (the running cost at the Euler-predicted state with the Δt-scaled penalty, linearized in
//! the step). Its minimizer is `-∂_{x_i} h_i(X̄) / α(t + Δt)`; replacing `α(t + Δt)` by
//! `α(t)` gives the best-reply control.

use crate::error::{Error, Result};
use crate::model::{uniform_steps, uniform_time_grid, ControlProfile, ModelSpec, ParticleEnsemble, Trajectory};
use ndarray::Array2;

/// Default blow-up guard on `|x_i|`.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// Offset at which the MPC objective is sampled around its computed minimizer.
pub const MPC_PROBE: f64 = 1e-4;

/// Step of the central difference used to re-derive `∂_{x_i} h_i` from the cost itself.
const GRADIENT_PROBE: f64 = 1e-6;

/// Which control weight the MPC step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcScheme {
    /// `α(t)`: the best-reply control.
    Taylor,
    /// `α(t + Δt)`: the exact minimizer of the one-step problem.
    Exact,
}

/// Best-reply control for cost gradient `grad` and weight `alpha`.
#[inline]
pub(crate) fn best_reply(grad: f64, alpha: f64) -> f64 {
    -grad / alpha
}

/// `u_i = -∂_{x_i} h_i(X) / α(t)` for every particle.
pub fn brs_control(model: &ModelSpec, x: &ParticleEnsemble, t: f64) -> Result<Vec<f64>> {
    let alpha = model.alpha.positive_at(t)?;
    model.cost_grad(x, 0)?;
    Ok(model
        .cost_grad_slice(x.positions())
        .into_iter()
        .map(|g| best_reply(g, alpha))
        .collect())
}

/// Controls applied over one MPC interval and the Euler-advanced ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub controls: Vec<f64>,
    pub next: ParticleEnsemble,
}

/// One MPC step with the exact minimizer `-∂_{x_i} h_i(X̄) / α(t + Δt)`.
///
/// The minimum is confirmed by sampling the one-step objective at `ũ_i ± 1e-4`, with the
/// cost gradient in the objective re-derived by central differences of the cost. A
/// kernel whose derivative disagrees with its values fails here with a numerical error.
pub fn mpc_step_exact(model: &ModelSpec, x: &ParticleEnsemble, t: f64, dt: f64) -> Result<MpcStep> {
    mpc_step(model, x, t, dt, MpcScheme::Exact)
}

/// One MPC step with the Taylor-expanded control `-∂_{x_i} h_i(X̄) / α(t)`.
pub fn mpc_step_taylor(model: &ModelSpec, x: &ParticleEnsemble, t: f64, dt: f64) -> Result<MpcStep> {
    mpc_step(model, x, t, dt, MpcScheme::Taylor)
}

fn mpc_step(
    model: &ModelSpec,
    x: &ParticleEnsemble,
    t: f64,
    dt: f64,
    scheme: MpcScheme,
) -> Result<MpcStep> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Input(format!("MPC step needs dt > 0, got {dt}")));
    }
    model.cost_grad(x, 0)?;
    let xs = x.positions();
    let alpha = control_weight(model, t, t + dt, scheme)?;
    let forces = model.forces_slice(xs);
    let controls: Vec<f64> = forces.iter().map(|&(_, g)| best_reply(g, alpha)).collect();
    if scheme == MpcScheme::Exact {
        verify_minimizers(model, xs, &forces, &controls, dt, alpha)?;
    }
    let next = xs
        .iter()
        .zip(&forces)
        .zip(&controls)
        .map(|((&xi, &(f, _)), &u)| xi + dt * (f + u))
        .collect();
    Ok(MpcStep {
        controls,
        next: ParticleEnsemble::new(next, t + dt)?,
    })
}

fn control_weight(model: &ModelSpec, t: f64, t_next: f64, scheme: MpcScheme) -> Result<f64> {
    match scheme {
        MpcScheme::Taylor => model.alpha.positive_at(t),
        MpcScheme::Exact => model.alpha.positive_at(t_next),
    }
}

/// One-step objective of particle `i`, less the constant `h_i(X̄)`, with slope `slope`
/// standing in for `∂_{x_i} h_i(X̄)`.
pub fn mpc_objective(drift: f64, slope: f64, alpha: f64, dt: f64, u: f64) -> f64 {
    dt * slope * (drift + u) + 0.5 * dt * alpha * u * u
}

fn verify_minimizers(
    model: &ModelSpec,
    xs: &[f64],
    forces: &[(f64, f64)],
    controls: &[f64],
    dt: f64,
    alpha: f64,
) -> Result<()> {
    for (i, (&(f, _), &u)) in forces.iter().zip(controls).enumerate() {
        let slope = (model.cost_row_at(xs, i, xs[i] + GRADIENT_PROBE)
            - model.cost_row_at(xs, i, xs[i] - GRADIENT_PROBE))
            / (2.0 * GRADIENT_PROBE);
        let at = mpc_objective(f, slope, alpha, dt, u);
        let below = mpc_objective(f, slope, alpha, dt, u - MPC_PROBE);
        let above = mpc_objective(f, slope, alpha, dt, u + MPC_PROBE);
        if !(below > at && above > at) {
            return Err(Error::Numerical {
                step: None,
                message: format!(
                    "MPC control {u} of particle {i} is not a local minimizer of its one-step objective \
                     (J(u-δ) = {below}, J(u) = {at}, J(u+δ) = {above}); check the cost kernel derivative"
                ),
            });
        }
    }
    Ok(())
}

/// Trajectory and applied controls of a controlled particle run.
#[derive(Debug, Clone, PartialEq)]
pub struct BrsRun {
    pub trajectory: Trajectory,
    pub controls: ControlProfile,
}

/// Repeated MPC steps from `x0` over `[0, T]` with the default divergence bound.
pub fn integrate_brs(
    model: &ModelSpec,
    x0: &ParticleEnsemble,
    dt: f64,
    scheme: MpcScheme,
) -> Result<BrsRun> {
    integrate_brs_bounded(model, x0, dt, scheme, DEFAULT_DIVERGENCE_BOUND)
}

/// As [`integrate_brs`], aborting once any `|x_i|` exceeds `bound`.
pub fn integrate_brs_bounded(
    model: &ModelSpec,
    x0: &ParticleEnsemble,
    dt: f64,
    scheme: MpcScheme,
    bound: f64,
) -> Result<BrsRun> {
    model.cost_grad(x0, 0)?;
    let steps = uniform_steps(model.horizon, dt)?;
    let times = uniform_time_grid(model.horizon, steps);
    let dt = model.horizon / steps as f64;
    let n = x0.len();
    let mut controls = Array2::zeros((n, steps));
    let mut states = Vec::with_capacity(steps + 1);
    states.push(ParticleEnsemble::from_raw(x0.positions().to_vec(), 0.0));
    for l in 0..steps {
        let xs = states[l].positions();
        let alpha = control_weight(model, times[l], times[l + 1], scheme)?;
        let forces = model.forces_slice(xs);
        let u: Vec<f64> = forces.iter().map(|&(_, g)| best_reply(g, alpha)).collect();
        if scheme == MpcScheme::Exact {
            verify_minimizers(model, xs, &forces, &u, dt, alpha).map_err(|e| e.at_step(l))?;
        }
        let next: Vec<f64> = xs
            .iter()
            .zip(&forces)
            .zip(&u)
            .map(|((&xi, &(f, _)), &ui)| xi + dt * (f + ui))
            .collect();
        check_bound(&next, l + 1, bound)?;
        for (i, ui) in u.into_iter().enumerate() {
            controls[[i, l]] = ui;
        }
        states.push(ParticleEnsemble::from_raw(next, times[l + 1]));
    }
    Ok(BrsRun {
        trajectory: Trajectory { dt, states },
        controls: ControlProfile::from_raw(controls, times),
    })
}

pub(crate) fn check_bound(xs: &[f64], step: usize, bound: f64) -> Result<()> {
    for (index, &value) in xs.iter().enumerate() {
        if !(value.abs() <= bound) {
            return Err(Error::Divergence {
                step,
                index,
                value,
                bound,
            });
        }
    }
    Ok(())
}
