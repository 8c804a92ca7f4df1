//! Numerical laboratory linking the N-player differential game, its best-reply/MPC
//! particle approximation, the kinetic mean-field equation and the mean-field game system
//! on the real line.
//!
//! * [`model`]: game instance and evaluators of drift, running cost and their gradients.
//! * [`controller`]: best-reply and one-step MPC controls, controlled particle integrator.
//! * [`nash`]: Pontryagin forward-backward sweeps for open-loop Nash equilibria.
//! * [`kinetic`]: upwind finite volumes for the best-reply kinetic equation.
//! * [`mfg`]: HJB/continuity fixed point and the receding-horizon closure.
//! * [`measures`]: empirical measures, Wasserstein-1 and moments.

pub mod controller;
pub mod error;
pub mod grid;
pub mod kinetic;
pub mod measures;
pub mod mfg;
pub mod model;
pub mod nash;

pub use controller::{
    brs_control, integrate_brs, integrate_brs_bounded, mpc_step_exact, mpc_step_taylor, BrsRun,
    MpcScheme, MpcStep, DEFAULT_DIVERGENCE_BOUND,
};
pub use error::{Error, Result};
pub use grid::{DensityGrid, SpaceGrid};
pub use kinetic::{solve_kinetic, step_upwind, velocity_field, DensityTrajectory, CFL_LIMIT};
pub use measures::{empirical, moments, w1, w1_sorted_atoms, EmpiricalMeasure, Measure, Moments};
pub use mfg::{
    fp_forward, hjb_backward, mfg_fixed_point, mpc_mfg_closure, short_horizon_gap, total_cost,
    MfgSolution, PicardParams, ValueGrid,
};
pub use model::{
    uniform_steps, uniform_time_grid, Alpha, ControlProfile, ModelSpec, PairKernel,
    ParticleEnsemble, Trajectory,
};
pub use nash::{
    gradient_via_adjoint, nash_sweep, nash_sweep_from, simulate_state, solve_adjoint, value,
    AdjointField, NashSolution, SweepParams,
};
