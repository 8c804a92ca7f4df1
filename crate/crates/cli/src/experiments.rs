//! The five experiments. Each returns a [`Report`] or names the stage that failed.

use mfgmpc::{
    brs_control, empirical, integrate_brs_bounded, mfg, mfg_fixed_point, moments, mpc_mfg_closure,
    mpc_step_exact, nash_sweep, solve_kinetic, total_cost, value, w1, DensityGrid, MpcScheme,
};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::output::{fmt_f64, Report, Table};
use crate::sampling::{initial_density, sample_initial};

/// A solver stage that failed or did not converge.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

fn stage(name: &'static str) -> impl Fn(mfgmpc::Error) -> StageError {
    move |e| StageError { stage: name, message: e.to_string() }
}

type Outcome = Result<Report, StageError>;

/// Runs `cfg` on the current rayon pool. Cells run in parallel but are merged in a fixed
/// order, so the report does not depend on the thread count.
pub fn run(cfg: &ExperimentConfig) -> Outcome {
    match cfg.kind {
        ExperimentKind::ParticleVsKinetic => particle_vs_kinetic(cfg),
        ExperimentKind::MpcVsBrs => mpc_vs_brs(cfg),
        ExperimentKind::MfgVsBrs => mfg_vs_brs(cfg),
        ExperimentKind::ShortHorizonGap => short_horizon_gap(cfg),
        ExperimentKind::NashVsBrs => nash_vs_brs(cfg),
    }
}

fn initial(cfg: &ExperimentConfig) -> Result<DensityGrid, StageError> {
    initial_density(cfg.grid, &cfg.initial).map_err(stage("initial"))
}

/// `prev / gap`, blank on the first row.
fn ratio(prev: Option<f64>, gap: f64) -> String {
    prev.map_or_else(String::new, |p| fmt_f64(p / gap))
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

struct Cell {
    n: usize,
    seed: u64,
    w1: f64,
    mean: f64,
    variance: f64,
}

/// W1 between BRS particles at `T` and the kinetic density at `T`, per `(N, seed)` cell.
fn particle_vs_kinetic(cfg: &ExperimentConfig) -> Outcome {
    let dt = cfg.dt();
    let m0 = initial(cfg)?;
    let pde = solve_kinetic(&cfg.model, &m0, dt).map_err(stage("kinetic"))?;
    let target = pde.last();
    let jobs: Vec<(usize, u64)> = cfg
        .particles
        .iter()
        .flat_map(|&n| (0..cfg.seeds as u64).map(move |s| (n, cfg.seed.wrapping_add(s))))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(n, seed)| -> Result<Cell, StageError> {
            let model = cfg.model.clone().with_particles(n).map_err(stage("particles"))?;
            let x0 = sample_initial(seed, n, &cfg.initial).map_err(stage("sampling"))?;
            let run = integrate_brs_bounded(&model, &x0, dt, MpcScheme::Taylor, cfg.divergence_bound)
                .map_err(stage("particles"))?;
            let final_measure = empirical(run.trajectory.last());
            let w = w1(&final_measure, target).map_err(stage("w1"))?;
            let m = moments(&final_measure);
            Ok(Cell { n, seed, w1: w, mean: m.mean, variance: m.variance })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = Report::default();
    let mut summary = Table::new(
        "particle_vs_kinetic",
        vec!["n_particles", "seeds", "mean_w1", "std_w1", "min_w1", "max_w1"],
    );
    let mut means = Vec::new();
    for chunk in cells.chunks(cfg.seeds) {
        let n = chunk[0].n;
        let mut table = Table::new(format!("particle_vs_kinetic_n{n}"), vec!["seed", "w1", "mean", "variance"]);
        for c in chunk {
            table.push(vec![c.seed.to_string(), fmt_f64(c.w1), fmt_f64(c.mean), fmt_f64(c.variance)]);
        }
        report.cells.push(table);
        let k = chunk.len() as f64;
        let mean = chunk.iter().map(|c| c.w1).sum::<f64>() / k;
        let std = if chunk.len() > 1 {
            (chunk.iter().map(|c| (c.w1 - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = chunk.iter().map(|c| c.w1).fold(f64::INFINITY, f64::min);
        let max = chunk.iter().map(|c| c.w1).fold(f64::NEG_INFINITY, f64::max);
        summary.push(vec![
            n.to_string(),
            chunk.len().to_string(),
            fmt_f64(mean),
            fmt_f64(std),
            fmt_f64(min),
            fmt_f64(max),
        ]);
        means.push((n as f64, mean));
    }
    report.tables.push(summary);
    report.metrics.insert("dx".into(), json!(cfg.grid.dx()));
    report.metrics.insert("dt".into(), json!(dt));
    report.metrics.insert("kinetic_clipped_mass".into(), json!(pde.clipped_mass));
    let distinct = means.windows(2).all(|w| w[0].0 != w[1].0);
    if means.len() >= 2 && distinct {
        let (x, y): (Vec<f64>, Vec<f64>) = means.iter().cloned().unzip();
        report.metrics.insert("fitted_exponent".into(), json!(-log_log_slope(&x, &y)));
    }
    Ok(report)
}

/// Exact-vs-Taylor MPC gap per step size, and the first exact step against [`brs_control`].
fn mpc_vs_brs(cfg: &ExperimentConfig) -> Outcome {
    let x0 = sample_initial(cfg.seed, cfg.model.n_particles, &cfg.initial).map_err(stage("sampling"))?;
    let rows = cfg
        .dts
        .par_iter()
        .map(|&dt| -> Result<[f64; 4], StageError> {
            let bound = cfg.divergence_bound;
            let exact = integrate_brs_bounded(&cfg.model, &x0, dt, MpcScheme::Exact, bound).map_err(stage("mpc_exact"))?;
            let taylor = integrate_brs_bounded(&cfg.model, &x0, dt, MpcScheme::Taylor, bound).map_err(stage("mpc_taylor"))?;
            let control_gap = exact
                .controls
                .values()
                .iter()
                .zip(taylor.controls.values().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let state_gap = exact
                .trajectory
                .last()
                .positions()
                .iter()
                .zip(taylor.trajectory.last().positions())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let step = mpc_step_exact(&cfg.model, &x0, 0.0, dt).map_err(stage("mpc_exact"))?;
            let brs = brs_control(&cfg.model, &x0, 0.0).map_err(stage("brs"))?;
            let brs_gap = step.controls.iter().zip(&brs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok([dt, control_gap, state_gap, brs_gap])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(
        "mpc_vs_brs",
        vec!["dt", "steps", "control_gap", "control_gap_ratio", "state_gap", "initial_brs_gap"],
    );
    let mut prev = None;
    for [dt, control_gap, state_gap, brs_gap] in rows {
        let steps = mfgmpc::uniform_steps(cfg.model.horizon, dt).map_err(stage("mpc_exact"))?;
        table.push(vec![
            fmt_f64(dt),
            steps.to_string(),
            fmt_f64(control_gap),
            ratio(prev, control_gap),
            fmt_f64(state_gap),
            fmt_f64(brs_gap),
        ]);
        prev = Some(control_gap);
    }
    Ok(Report { tables: vec![table], ..Report::default() })
}

/// Density paths and total costs of the MFG equilibrium and the receding-horizon closure.
fn mfg_vs_brs(cfg: &ExperimentConfig) -> Outcome {
    let dt = cfg.dt();
    let model = &cfg.model;
    let m0 = initial(cfg)?;
    let (solution, closure) = rayon::join(
        || mfg_fixed_point(model, &m0, dt, cfg.picard),
        || mpc_mfg_closure(model, &m0, dt),
    );
    let solution = solution.map_err(stage("mfg"))?;
    let closure = closure.map_err(stage("closure"))?;
    if !solution.converged {
        return Err(StageError {
            stage: "mfg",
            message: format!(
                "Picard iteration did not converge: residual {:e} after {} iterations (tolerance {:e})",
                solution.residual, solution.iterations, cfg.picard.tolerance
            ),
        });
    }
    let grid = cfg.grid;
    let density = &solution.density;
    let v = &solution.value;
    let game_cost = total_cost(model, density, |l, k| -v.node_gradient(l, k) / model.alpha.eval(density.times[l]));
    let closure_cost = total_cost(model, &closure, |l, k| {
        -model.mean_field_cost_grad(grid.center(k), &closure.slices[l]) / model.alpha.eval(closure.times[l])
    });

    let mut path = Table::new(
        "mfg_vs_brs",
        vec!["time", "mfg_mean", "mfg_variance", "closure_mean", "closure_variance", "w1"],
    );
    for ((t, a), b) in density.times.iter().zip(&density.slices).zip(&closure.slices) {
        let (ma, mb) = (moments(a), moments(b));
        path.push(vec![
            fmt_f64(*t),
            fmt_f64(ma.mean),
            fmt_f64(ma.variance),
            fmt_f64(mb.mean),
            fmt_f64(mb.variance),
            fmt_f64(w1(a, b).map_err(stage("w1"))?),
        ]);
    }
    let mut summary = Table::new(
        "mfg_vs_brs_summary",
        vec!["mfg_total_cost", "closure_total_cost", "picard_iterations", "picard_residual", "mfg_clipped_mass", "closure_clipped_mass"],
    );
    summary.push(vec![
        fmt_f64(game_cost),
        fmt_f64(closure_cost),
        solution.iterations.to_string(),
        fmt_f64(solution.residual),
        fmt_f64(density.clipped_mass),
        fmt_f64(closure.clipped_mass),
    ]);
    let mut history = Table::new("mfg_picard", vec!["iteration", "residual"]);
    for (k, r) in solution.residual_history.iter().enumerate() {
        history.push(vec![(k + 1).to_string(), fmt_f64(*r)]);
    }
    let mut metrics = Map::new();
    metrics.insert("mfg_total_cost".into(), json!(game_cost));
    metrics.insert("closure_total_cost".into(), json!(closure_cost));
    Ok(Report { tables: vec![path, summary, history], cells: Vec::new(), metrics })
}

/// Short-horizon value gap per step size.
fn short_horizon_gap(cfg: &ExperimentConfig) -> Outcome {
    let m0 = initial(cfg)?;
    let gaps = cfg
        .dts
        .par_iter()
        .map(|&dt| mfg::short_horizon_gap_with(&cfg.model, &m0, dt, cfg.picard).map_err(stage("short_horizon_gap")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new("short_horizon_gap", vec!["dt", "gap", "gap_ratio"]);
    let mut prev = None;
    for (dt, gap) in cfg.dts.iter().zip(gaps) {
        table.push(vec![fmt_f64(*dt), fmt_f64(gap), ratio(prev, gap)]);
        prev = Some(gap);
    }
    let mut metrics = Map::new();
    metrics.insert("dx".into(), json!(cfg.grid.dx()));
    metrics.insert("substeps".into(), json!(mfg::GAP_SUBSTEPS));
    Ok(Report { tables: vec![table], cells: Vec::new(), metrics })
}

/// Converged open-loop Nash controls against BRS controls, particle by particle.
/// Particles are indexed in ascending order of initial position.
fn nash_vs_brs(cfg: &ExperimentConfig) -> Outcome {
    let dt = cfg.dt();
    let model = &cfg.model;
    let x0 = sample_initial(cfg.seed, model.n_particles, &cfg.initial).map_err(stage("sampling"))?;
    let (nash, brs) = rayon::join(
        || nash_sweep(model, &x0, dt, cfg.sweep),
        || integrate_brs_bounded(model, &x0, dt, MpcScheme::Exact, cfg.divergence_bound),
    );
    let nash = nash.map_err(stage("nash"))?;
    let brs = brs.map_err(stage("brs"))?;
    if !nash.converged {
        return Err(StageError {
            stage: "nash",
            message: format!(
                "sweep did not converge: residual {:e} after {} iterations (tolerance {:e})",
                nash.residual, nash.iterations, cfg.sweep.tolerance
            ),
        });
    }
    let mut table = Table::new(
        "nash_vs_brs",
        vec!["particle", "x0", "u_nash_0", "u_brs_0", "abs_control_gap", "value_nash", "value_brs"],
    );
    let mut max_gap: f64 = 0.0;
    let (mut nash_total, mut brs_total) = (0.0, 0.0);
    for (i, &xi) in x0.positions().iter().enumerate() {
        let (un, ub) = (nash.controls.get(i, 0), brs.controls.get(i, 0));
        let vn = value(model, 0.0, &x0, &nash.controls, i).map_err(stage("value"))?;
        let vb = value(model, 0.0, &x0, &brs.controls, i).map_err(stage("value"))?;
        max_gap = max_gap.max((un - ub).abs());
        nash_total += vn;
        brs_total += vb;
        table.push(vec![
            i.to_string(),
            fmt_f64(xi),
            fmt_f64(un),
            fmt_f64(ub),
            fmt_f64((un - ub).abs()),
            fmt_f64(vn),
            fmt_f64(vb),
        ]);
    }
    let blank = String::new;
    table.push(vec!["max".into(), blank(), blank(), blank(), fmt_f64(max_gap), blank(), blank()]);
    let mut history = Table::new("nash_sweep", vec!["iteration", "residual", "merit"]);
    for (k, (r, m)) in nash.residual_history.iter().zip(&nash.merit_history).enumerate() {
        history.push(vec![(k + 1).to_string(), fmt_f64(*r), fmt_f64(*m)]);
    }
    let mut metrics = Map::new();
    metrics.insert("sweep_iterations".into(), json!(nash.iterations));
    metrics.insert("sweep_residual".into(), json!(nash.residual));
    metrics.insert("max_abs_control_gap".into(), json!(max_gap));
    metrics.insert("value_sum_nash".into(), Value::from(nash_total));
    metrics.insert("value_sum_brs".into(), Value::from(brs_total));
    Ok(Report { tables: vec![table, history], cells: Vec::new(), metrics })
}
