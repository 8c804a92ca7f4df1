//! Game instance: pairwise drift and cost kernels, the control weight, and evaluators for
//! particle ensembles and grid densities.
//!
//! For an ensemble `X = (x_1, ..., x_N)` the drift and running cost of particle `i` are
//!
//! ```text
//! f_i(X) = (1/N)     Σ_j     P(x_i, x_j) (x_j - x_i)
//! h_i(X) = (1/(N-1)) Σ_{j≠i} φ(x_i, x_j)
//! ```
//!
//! and their mean-field counterparts replace the empirical sums by integrals against a
//! density `m`. Every sum runs in ascending index order so outputs are bit-reproducible.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::DensityGrid;

/// Ensembles at least this large evaluate per-particle rows in parallel.
const PARALLEL_ROWS: usize = 256;

/// Smooth pairwise kernel `k(x, y)` with analytic partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum PairKernel {
    /// `k ≡ c`.
    Constant(f64),
    /// `k(x, y) = scale · (x - y)² / 2`.
    Quadratic { scale: f64 },
    /// C¹ smoothing of `1{|x - y| ≤ radius}`: one inside `radius - width`, zero beyond
    /// `radius`, cubic smoothstep in between.
    BoundedConfidence { radius: f64, width: f64 },
    /// `k(x, y) = Σ_a Σ_b c[a][b] x^a y^b`.
    Polynomial(Vec<Vec<f64>>),
}

impl PairKernel {
    /// Bounded-confidence kernel with the default transition width `0.05 · radius`.
    pub fn bounded_confidence(radius: f64) -> Self {
        PairKernel::BoundedConfidence {
            radius,
            width: 0.05 * radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PairKernel::Constant(c) if !c.is_finite() => {
                Err(Error::Config(format!("constant kernel value {c} is not finite")))
            }
            PairKernel::Quadratic { scale } if !scale.is_finite() => {
                Err(Error::Config(format!("quadratic kernel scale {scale} is not finite")))
            }
            PairKernel::BoundedConfidence { radius, width }
                if !(radius.is_finite() && *radius > 0.0 && *width > 0.0 && width <= radius) =>
            {
                Err(Error::Config(format!(
                    "bounded-confidence kernel needs 0 < width <= radius, got radius {radius}, width {width}"
                )))
            }
            PairKernel::Polynomial(rows)
                if rows.is_empty() || rows.iter().flatten().any(|c| !c.is_finite()) =>
            {
                Err(Error::Config(
                    "polynomial kernel needs a non-empty table of finite coefficients".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            PairKernel::Constant(c) => *c,
            PairKernel::Quadratic { scale } => {
                let d = x - y;
                0.5 * scale * d * d
            }
            PairKernel::BoundedConfidence { radius, width } => {
                smoothstep_indicator((x - y).abs(), *radius, *width)
            }
            PairKernel::Polynomial(rows) => poly_eval(rows, x, y, 0, 0),
        }
    }

    /// `∂k/∂x`.
    #[inline]
    pub fn dx(&self, x: f64, y: f64) -> f64 {
        match self {
            PairKernel::Constant(_) => 0.0,
            PairKernel::Quadratic { scale } => scale * (x - y),
            PairKernel::BoundedConfidence { radius, width } => {
                let d = x - y;
                smoothstep_indicator_slope(d.abs(), *radius, *width) * d.signum()
            }
            PairKernel::Polynomial(rows) => poly_eval(rows, x, y, 1, 0),
        }
    }

    /// `∂k/∂y`.
    #[inline]
    pub fn dy(&self, x: f64, y: f64) -> f64 {
        match self {
            PairKernel::Constant(_) => 0.0,
            PairKernel::Quadratic { scale } => scale * (y - x),
            PairKernel::BoundedConfidence { .. } => -self.dx(x, y),
            PairKernel::Polynomial(rows) => poly_eval(rows, x, y, 0, 1),
        }
    }

    /// True when `∂k/∂x` vanishes identically.
    pub fn is_flat(&self) -> bool {
        match self {
            PairKernel::Constant(_) => true,
            PairKernel::Quadratic { scale } => *scale == 0.0,
            PairKernel::BoundedConfidence { .. } => false,
            PairKernel::Polynomial(rows) => rows.iter().skip(1).flatten().all(|c| *c == 0.0),
        }
    }
}

fn smoothstep_indicator(s: f64, radius: f64, width: f64) -> f64 {
    let inner = radius - width;
    if s <= inner {
        1.0
    } else if s >= radius {
        0.0
    } else {
        let z = (s - inner) / width;
        1.0 - z * z * (3.0 - 2.0 * z)
    }
}

fn smoothstep_indicator_slope(s: f64, radius: f64, width: f64) -> f64 {
    let inner = radius - width;
    if s <= inner || s >= radius {
        0.0
    } else {
        let z = (s - inner) / width;
        -6.0 * z * (1.0 - z) / width
    }
}

/// Evaluates `∂^dx_x ∂^dy_y Σ c[a][b] x^a y^b` for `dx, dy ∈ {0, 1}` by nested Horner.
fn poly_eval(rows: &[Vec<f64>], x: f64, y: f64, dx: u32, dy: u32) -> f64 {
    if dx == 1 {
        rows.iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (a, row)| acc * x + poly_row(row, y, dy) * a as f64)
    } else {
        rows.iter()
            .rev()
            .fold(0.0, |acc, row| acc * x + poly_row(row, y, dy))
    }
}

fn poly_row(row: &[f64], y: f64, dy: u32) -> f64 {
    if dy == 1 {
        row.iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (b, c)| acc * y + c * b as f64)
    } else {
        row.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }
}

/// Control weight `α(t)`, shared by every particle.
#[derive(Debug, Clone, PartialEq)]
pub enum Alpha {
    Constant(f64),
    /// `α(t) = offset + slope · t`.
    Affine { offset: f64, slope: f64 },
    /// `α(t) = Σ_k c_k t^k`.
    Polynomial(Vec<f64>),
}

impl Alpha {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Alpha::Constant(a) => *a,
            Alpha::Affine { offset, slope } => offset + slope * t,
            Alpha::Polynomial(c) => c.iter().rev().fold(0.0, |acc, c| acc * t + c),
        }
    }

    /// Checks `α > 0` at 1001 evenly spaced times in `[0, horizon]`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        const SAMPLES: usize = 1000;
        for s in 0..=SAMPLES {
            let t = horizon * s as f64 / SAMPLES as f64;
            let a = self.eval(t);
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!(
                    "control weight alpha({t}) = {a} must be strictly positive"
                )));
            }
        }
        Ok(())
    }

    /// `α(t)`, rejecting non-positive values.
    pub fn positive_at(&self, t: f64) -> Result<f64> {
        let a = self.eval(t);
        if a.is_finite() && a > 0.0 {
            Ok(a)
        } else {
            Err(Error::Config(format!(
                "control weight alpha({t}) = {a} must be strictly positive"
            )))
        }
    }
}

/// The game instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub drift_kernel: PairKernel,
    pub cost_kernel: PairKernel,
    pub alpha: Alpha,
    pub n_particles: usize,
    pub horizon: f64,
}

impl ModelSpec {
    pub fn new(
        drift_kernel: PairKernel,
        cost_kernel: PairKernel,
        alpha: Alpha,
        n_particles: usize,
        horizon: f64,
    ) -> Result<Self> {
        let model = Self {
            drift_kernel,
            cost_kernel,
            alpha,
            n_particles,
            horizon,
        };
        model.validate()?;
        Ok(model)
    }

    /// `P ≡ 1`, `φ(x, y) = (x - y)² / 2`, `α ≡ 1`.
    pub fn consensus(n_particles: usize, horizon: f64) -> Result<Self> {
        Self::new(
            PairKernel::Constant(1.0),
            PairKernel::Quadratic { scale: 1.0 },
            Alpha::Constant(1.0),
            n_particles,
            horizon,
        )
    }

    /// Smoothed bounded-confidence interaction `P = 1{|x - y| ≤ R}`, quadratic cost, `α ≡ 1`.
    pub fn bounded_confidence(n_particles: usize, horizon: f64, radius: f64) -> Result<Self> {
        Self::new(
            PairKernel::bounded_confidence(radius),
            PairKernel::Quadratic { scale: 1.0 },
            Alpha::Constant(1.0),
            n_particles,
            horizon,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("model needs at least one particle".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        self.drift_kernel.validate()?;
        self.cost_kernel.validate()?;
        self.alpha.validate(self.horizon)
    }

    /// Spot-checks `P(x, y) >= 0` on a 33 x 33 lattice of `[lo, hi]²`.
    pub fn check_drift_kernel_on(&self, lo: f64, hi: f64) -> Result<()> {
        const SAMPLES: usize = 32;
        for a in 0..=SAMPLES {
            for b in 0..=SAMPLES {
                let x = lo + (hi - lo) * a as f64 / SAMPLES as f64;
                let y = lo + (hi - lo) * b as f64 / SAMPLES as f64;
                let p = self.drift_kernel.eval(x, y);
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::Config(format!(
                        "drift kernel P({x}, {y}) = {p} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: Alpha) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_particles(mut self, n_particles: usize) -> Result<Self> {
        self.n_particles = n_particles;
        self.validate()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    fn check_ensemble(&self, x: &ParticleEnsemble) -> Result<()> {
        if x.len() != self.n_particles {
            return Err(Error::Input(format!(
                "ensemble has {} particles, model expects {}",
                x.len(),
                self.n_particles
            )));
        }
        Ok(())
    }

    fn check_index(&self, x: &ParticleEnsemble, i: usize) -> Result<()> {
        self.check_ensemble(x)?;
        if x.len() < 2 {
            return Err(Error::Domain(
                "running cost needs at least two particles (X_{-i} is empty)".into(),
            ));
        }
        if i >= x.len() {
            return Err(Error::Input(format!(
                "particle index {i} out of range for {} particles",
                x.len()
            )));
        }
        Ok(())
    }

    /// `f(X)`, one component per particle.
    pub fn drift(&self, x: &ParticleEnsemble) -> Result<Vec<f64>> {
        self.check_ensemble(x)?;
        Ok(self.drift_slice(x.positions()))
    }

    /// `h_i(X)`.
    pub fn cost(&self, x: &ParticleEnsemble, i: usize) -> Result<f64> {
        self.check_index(x, i)?;
        Ok(self.cost_row(x.positions(), i))
    }

    /// `∂_{x_i} h_i(X)`.
    pub fn cost_grad(&self, x: &ParticleEnsemble, i: usize) -> Result<f64> {
        self.check_index(x, i)?;
        Ok(self.cost_grad_row(x.positions(), i))
    }

    /// Full gradient `(∂_{x_j} h_i(X))_j`.
    pub fn cost_gradient(&self, x: &ParticleEnsemble, i: usize) -> Result<Vec<f64>> {
        self.check_index(x, i)?;
        Ok(self.cost_gradient_slice(x.positions(), i))
    }

    /// Drift Jacobian `J[k][j] = ∂_{x_j} f_k(X)`.
    pub fn drift_jacobian(&self, x: &ParticleEnsemble) -> Result<Array2<f64>> {
        self.check_ensemble(x)?;
        Ok(self.drift_jacobian_slice(x.positions()))
    }

    /// `𝐟(x, m) = ∫ P(x, y) (y - x) m(y) dy` by the midpoint rule on cell centers.
    pub fn mean_field_drift(&self, x: f64, m: &DensityGrid) -> f64 {
        let grid = m.grid();
        let mut acc = 0.0;
        for (k, &mk) in m.values().iter().enumerate() {
            let y = grid.center(k);
            acc += self.drift_kernel.eval(x, y) * (y - x) * mk;
        }
        acc * grid.dx()
    }

    /// `∂_x 𝐡(x, m) = ∫ ∂_x φ(x, y) m(y) dy`.
    pub fn mean_field_cost_grad(&self, x: f64, m: &DensityGrid) -> f64 {
        let grid = m.grid();
        let mut acc = 0.0;
        for (k, &mk) in m.values().iter().enumerate() {
            acc += self.cost_kernel.dx(x, grid.center(k)) * mk;
        }
        acc * grid.dx()
    }

    /// `𝐡(x, m) = ∫ φ(x, y) m(y) dy`.
    pub fn mean_field_cost(&self, x: f64, m: &DensityGrid) -> f64 {
        let grid = m.grid();
        let mut acc = 0.0;
        for (k, &mk) in m.values().iter().enumerate() {
            acc += self.cost_kernel.eval(x, grid.center(k)) * mk;
        }
        acc * grid.dx()
    }

    // Unchecked slice-level evaluators used inside the solvers.

    #[inline]
    pub(crate) fn drift_row(&self, xs: &[f64], i: usize) -> f64 {
        let xi = xs[i];
        let mut acc = 0.0;
        for &xj in xs {
            acc += self.drift_kernel.eval(xi, xj) * (xj - xi);
        }
        acc / xs.len() as f64
    }

    #[inline]
    pub(crate) fn cost_row(&self, xs: &[f64], i: usize) -> f64 {
        self.cost_row_at(xs, i, xs[i])
    }

    #[inline]
    pub(crate) fn cost_grad_row(&self, xs: &[f64], i: usize) -> f64 {
        let xi = xs[i];
        let mut acc = 0.0;
        for (j, &xj) in xs.iter().enumerate() {
            if j != i {
                acc += self.cost_kernel.dx(xi, xj);
            }
        }
        acc / (xs.len() - 1) as f64
    }

    /// `h_i` with particle `i` moved to `xi` and every other particle held fixed.
    #[inline]
    pub(crate) fn cost_row_at(&self, xs: &[f64], i: usize, xi: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &xj) in xs.iter().enumerate() {
            if j != i {
                acc += self.cost_kernel.eval(xi, xj);
            }
        }
        acc / (xs.len() - 1) as f64
    }

    /// `(f_i, ∂_{x_i} h_i)` in one pass. Each accumulator sees exactly the operations of
    /// [`Self::drift_row`] and [`Self::cost_grad_row`], so results agree bitwise.
    #[inline]
    pub(crate) fn forces_row(&self, xs: &[f64], i: usize) -> (f64, f64) {
        // Monomorphized loop for the consensus kernels; the arithmetic matches `eval`/`dx`.
        match (&self.drift_kernel, &self.cost_kernel) {
            (PairKernel::Constant(c), PairKernel::Quadratic { scale }) => {
                fused_row(xs, i, |_, _| *c, |x, y| scale * (x - y))
            }
            (p, phi) => fused_row(xs, i, |x, y| p.eval(x, y), |x, y| phi.dx(x, y)),
        }
    }

    pub(crate) fn drift_slice(&self, xs: &[f64]) -> Vec<f64> {
        map_rows(xs.len(), |i| self.drift_row(xs, i))
    }

    pub(crate) fn cost_grad_slice(&self, xs: &[f64]) -> Vec<f64> {
        map_rows(xs.len(), |i| self.cost_grad_row(xs, i))
    }

    pub(crate) fn forces_slice(&self, xs: &[f64]) -> Vec<(f64, f64)> {
        map_rows(xs.len(), |i| self.forces_row(xs, i))
    }

    pub(crate) fn cost_gradient_slice(&self, xs: &[f64], i: usize) -> Vec<f64> {
        let xi = xs[i];
        let scale = 1.0 / (xs.len() - 1) as f64;
        xs.iter()
            .enumerate()
            .map(|(j, &xj)| {
                if j == i {
                    self.cost_grad_row(xs, i)
                } else {
                    self.cost_kernel.dy(xi, xj) * scale
                }
            })
            .collect()
    }

    pub(crate) fn drift_jacobian_slice(&self, xs: &[f64]) -> Array2<f64> {
        let n = xs.len();
        let inv_n = 1.0 / n as f64;
        let p = &self.drift_kernel;
        let mut jac = Array2::zeros((n, n));
        for k in 0..n {
            let xk = xs[k];
            let mut diag = 0.0;
            for (l, &xl) in xs.iter().enumerate() {
                if l == k {
                    continue;
                }
                diag += p.dx(xk, xl) * (xl - xk) - p.eval(xk, xl);
                jac[[k, l]] = (p.dy(xk, xl) * (xl - xk) + p.eval(xk, xl)) * inv_n;
            }
            jac[[k, k]] = diag * inv_n;
        }
        jac
    }
}

#[inline(always)]
fn fused_row(
    xs: &[f64],
    i: usize,
    p: impl Fn(f64, f64) -> f64,
    dphi: impl Fn(f64, f64) -> f64,
) -> (f64, f64) {
    let xi = xs[i];
    let mut drift = 0.0;
    let mut grad = 0.0;
    for (j, &xj) in xs.iter().enumerate() {
        drift += p(xi, xj) * (xj - xi);
        if j != i {
            grad += dphi(xi, xj);
        }
    }
    (drift / xs.len() as f64, grad / (xs.len() - 1) as f64)
}

pub(crate) fn map_rows<T: Send>(n: usize, row: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if n >= PARALLEL_ROWS {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    }
}

/// State `X` of all particles at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    time: f64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, time: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Input("ensemble needs at least one particle".into()));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::Input(format!(
                "position of particle {i} is not finite: {}",
                positions[i]
            )));
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::Input(format!("ensemble time {time} must be >= 0")));
        }
        Ok(Self { positions, time })
    }

    /// Ensemble at `t = 0`.
    pub fn initial(positions: Vec<f64>) -> Result<Self> {
        Self::new(positions, 0.0)
    }

    pub(crate) fn from_raw(positions: Vec<f64>, time: f64) -> Self {
        Self { positions, time }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }
}

/// Sequence of ensembles on a uniform time grid `t_ℓ = ℓ Δt`, `ℓ = 0..=N_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<ParticleEnsemble>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &ParticleEnsemble {
        self.states.last().expect("trajectories hold at least the initial state")
    }
}

/// Piecewise-constant controls `ũ_{ℓ,i}` on `[t_ℓ, t_{ℓ+1})`, stored as `values[[i, ℓ]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProfile {
    values: Array2<f64>,
    time_grid: Vec<f64>,
}

impl ControlProfile {
    pub fn new(values: Array2<f64>, time_grid: Vec<f64>) -> Result<Self> {
        let steps = values.ncols();
        if time_grid.len() != steps + 1 {
            return Err(Error::Input(format!(
                "time grid has {} nodes for {steps} control intervals",
                time_grid.len()
            )));
        }
        if time_grid[0] != 0.0 {
            return Err(Error::Input("time grid must start at 0".into()));
        }
        if time_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("time grid must be strictly increasing".into()));
        }
        if values.iter().any(|u| !u.is_finite()) {
            return Err(Error::Input("control values must be finite".into()));
        }
        Ok(Self { values, time_grid })
    }

    /// All-zero controls for `n` particles on the uniform grid of `horizon` with step `dt`.
    pub fn zeros(n: usize, horizon: f64, dt: f64) -> Result<Self> {
        let steps = uniform_steps(horizon, dt)?;
        Self::new(Array2::zeros((n, steps)), uniform_time_grid(horizon, steps))
    }

    /// Controls given by `value(i, ℓ)` on the uniform grid of `horizon` with step `dt`.
    pub fn from_fn(
        n: usize,
        horizon: f64,
        dt: f64,
        value: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let steps = uniform_steps(horizon, dt)?;
        Self::new(
            Array2::from_shape_fn((n, steps), |(i, l)| value(i, l)),
            uniform_time_grid(horizon, steps),
        )
    }

    pub(crate) fn from_raw(values: Array2<f64>, time_grid: Vec<f64>) -> Self {
        Self { values, time_grid }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn n_particles(&self) -> usize {
        self.values.nrows()
    }

    pub fn steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.time_grid[1] - self.time_grid[0]
    }

    pub fn get(&self, i: usize, step: usize) -> f64 {
        self.values[[i, step]]
    }
}

/// Number of uniform steps `N_T = T / Δt`, requiring `Δt` to divide `T` to within `1e-12`.
pub fn uniform_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Input(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (steps * dt - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Input(format!(
            "time step {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(steps as usize)
}

/// Nodes `t_ℓ = ℓ T / N_T`, with the last node exactly `T`.
pub fn uniform_time_grid(horizon: f64, steps: usize) -> Vec<f64> {
    let dt = horizon / steps as f64;
    let mut grid: Vec<f64> = (0..=steps).map(|l| l as f64 * dt).collect();
    grid[steps] = horizon;
    grid
}
