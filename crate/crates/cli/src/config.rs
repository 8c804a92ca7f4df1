//! Strict JSON experiment configuration. Every problem found is reported, not just the first.

use std::path::PathBuf;

use mfgmpc::{Alpha, ModelSpec, PairKernel, PicardParams, SpaceGrid, SweepParams, DEFAULT_DIVERGENCE_BOUND};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ParticleVsKinetic,
    MpcVsBrs,
    MfgVsBrs,
    ShortHorizonGap,
    NashVsBrs,
}

impl ExperimentKind {
    pub const ALL: [(&'static str, ExperimentKind); 5] = [
        ("particle_vs_kinetic", ExperimentKind::ParticleVsKinetic),
        ("mpc_vs_brs", ExperimentKind::MpcVsBrs),
        ("mfg_vs_brs", ExperimentKind::MfgVsBrs),
        ("short_horizon_gap", ExperimentKind::ShortHorizonGap),
        ("nash_vs_brs", ExperimentKind::NashVsBrs),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, k)| *k == self).map(|(n, _)| *n).unwrap()
    }
}

/// Initial distribution of particles and of the grid density.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    /// Normal(mean, sd²) conditioned on `[lo, hi]`.
    GaussianTruncated { mean: f64, sd: f64, lo: f64, hi: f64 },
    /// `weight · N(means[0], sds[0]²) + (1 - weight) · N(means[1], sds[1]²)` conditioned on `[lo, hi]`.
    TwoBump { means: [f64; 2], sds: [f64; 2], weight: f64, lo: f64, hi: f64 },
    /// Fixed positions; sampling returns them sorted.
    Points(Vec<f64>),
}

impl Distribution {
    /// Interval holding all mass.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Distribution::Uniform { lo, hi }
            | Distribution::GaussianTruncated { lo, hi, .. }
            | Distribution::TwoBump { lo, hi, .. } => (*lo, *hi),
            Distribution::Points(p) => {
                let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    (lo, hi)
                } else {
                    (lo - 0.5, hi + 0.5)
                }
            }
        }
    }
}

/// Validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: PathBuf,
    pub model: ModelSpec,
    pub dt: Option<f64>,
    pub dts: Vec<f64>,
    pub grid: SpaceGrid,
    pub picard: PicardParams,
    pub sweep: SweepParams,
    pub divergence_bound: f64,
    pub initial: Distribution,
    pub particles: Vec<usize>,
    pub seeds: usize,
    /// The configuration as given, echoed into the manifest.
    pub raw: Value,
}

impl ExperimentConfig {
    /// `dt`, which every experiment except the step sweeps requires.
    pub fn dt(&self) -> f64 {
        self.dt.expect("validated configs carry dt where the experiment needs it")
    }
}

pub const DEFAULT_CELLS: usize = 256;
pub const DEFAULT_OUTPUT: &str = "results";
pub const DEFAULT_PARTICLES: [usize; 3] = [128, 512, 2048];
pub const DEFAULT_SEEDS: usize = 10;
pub const DEFAULT_DTS: [f64; 3] = [0.1, 0.05, 0.025];

struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn err(&mut self, path: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        match v.as_object() {
            Some(obj) => {
                for key in obj.keys() {
                    if !allowed.contains(&key.as_str()) {
                        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                        self.err(&full, "unknown key");
                    }
                }
                Some(obj)
            }
            None => {
                self.err(path_or_root(path), "expected an object");
                None
            }
        }
    }

    fn number(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<f64> {
        let full = join(path, key);
        match obj.get(key) {
            None => None,
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Some(x),
                _ => {
                    self.err(&full, format!("expected a finite number, got {v}"));
                    None
                }
            },
        }
    }

    fn required_number(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<f64> {
        if !obj.contains_key(key) {
            self.err(&join(path, key), "missing");
            return None;
        }
        self.number(obj, path, key)
    }

    fn positive(&mut self, obj: &Map<String, Value>, path: &str, key: &str, required: bool) -> Option<f64> {
        let x = if required {
            self.required_number(obj, path, key)
        } else {
            self.number(obj, path, key)
        }?;
        if x > 0.0 {
            Some(x)
        } else {
            self.err(&join(path, key), format!("must be positive, got {x}"));
            None
        }
    }

    fn unsigned(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<u64> {
        let v = obj.get(key)?;
        match v.as_u64() {
            Some(n) => Some(n),
            None => {
                self.err(&join(path, key), format!("expected a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn number_list(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.err(path, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for (k, item) in items.iter().enumerate() {
            match item.as_f64() {
                Some(x) if x.is_finite() => out.push(x),
                _ => {
                    self.err(&format!("{path}[{k}]"), format!("expected a finite number, got {item}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn table(&mut self, v: &Value, path: &str) -> Option<Vec<Vec<f64>>> {
        let Some(rows) = v.as_array() else {
            self.err(path, "expected an array of coefficient rows");
            return None;
        };
        if rows.is_empty() {
            self.err(path, "coefficient table is empty");
            return None;
        }
        rows.iter()
            .enumerate()
            .map(|(a, row)| self.number_list(row, &format!("{path}[{a}]")))
            .collect()
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn path_or_root(path: &str) -> &str {
    if path.is_empty() {
        "<root>"
    } else {
        path
    }
}

/// Parses and validates a configuration, returning every validation error on failure.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<String>> {
    let raw: Value = serde_json::from_str(text).map_err(|e| vec![format!("malformed JSON: {e}")])?;
    let mut c = Checker { errors: Vec::new() };
    let top = c
        .object(
            &raw,
            "",
            &["experiment", "seed", "output", "model", "solver", "initial", "particles", "seeds", "dts"],
        )
        .ok_or_else(|| c.errors.clone())?;

    let kind = match top.get("experiment") {
        None => {
            c.err("experiment", "missing");
            None
        }
        Some(Value::String(s)) => match ExperimentKind::ALL.iter().find(|(n, _)| n == s) {
            Some((_, k)) => Some(*k),
            None => {
                let known: Vec<&str> = ExperimentKind::ALL.iter().map(|(n, _)| *n).collect();
                c.err("experiment", format!("unknown experiment kind \"{s}\" (expected one of {})", known.join(", ")));
                None
            }
        },
        Some(v) => {
            c.err("experiment", format!("expected a string, got {v}"));
            None
        }
    };
    let seed = c.unsigned(top, "", "seed").unwrap_or(0);
    let output = match top.get("output") {
        None => Some(PathBuf::from(DEFAULT_OUTPUT)),
        Some(Value::String(s)) if !s.is_empty() => Some(PathBuf::from(s)),
        Some(v) => {
            c.err("output", format!("expected a non-empty path string, got {v}"));
            None
        }
    };

    let initial = match top.get("initial") {
        Some(v) => parse_initial(&mut c, v),
        None => {
            c.err("initial", "missing");
            None
        }
    };

    let solver_obj = match top.get("solver") {
        Some(v) => c.object(v, "solver", &["dt", "grid", "picard", "sweep", "divergence_bound"]),
        None => {
            c.err("solver", "missing");
            None
        }
    };
    let empty = Map::new();
    let solver = solver_obj.unwrap_or(&empty);
    let dt = c.positive(solver, "solver", "dt", false);
    let divergence_bound = c.positive(solver, "solver", "divergence_bound", false).unwrap_or(DEFAULT_DIVERGENCE_BOUND);
    let picard = solver.get("picard").map_or(Some(PicardParams::default()), |v| parse_picard(&mut c, v));
    let sweep = solver.get("sweep").map_or(Some(SweepParams::default()), |v| parse_sweep(&mut c, v));
    let grid = match solver.get("grid") {
        Some(v) => parse_grid(&mut c, v, initial.as_ref()),
        None => initial
            .as_ref()
            .and_then(|d| {
                let (lo, hi) = d.support();
                SpaceGrid::covering(lo, hi, DEFAULT_CELLS).ok()
            }),
    };

    let model = match top.get("model") {
        Some(v) => parse_model(&mut c, v, kind),
        None => {
            c.err("model", "missing");
            None
        }
    };
    if let (Some(m), Some(g)) = (&model, &grid) {
        if let Err(e) = m.check_drift_kernel_on(g.x_min(), g.x_max()) {
            c.err("model.drift", e);
        }
    }

    let particles = match top.get("particles") {
        None => DEFAULT_PARTICLES.to_vec(),
        Some(v) => {
            let list = c.number_list(v, "particles").unwrap_or_default();
            let mut out = Vec::new();
            for (k, x) in list.iter().enumerate() {
                if x.fract() == 0.0 && *x >= 2.0 {
                    out.push(*x as usize);
                } else {
                    c.err(&format!("particles[{k}]"), format!("particle counts must be integers >= 2, got {x}"));
                }
            }
            if out.is_empty() && !list.is_empty() || v.as_array().is_some_and(|a| a.is_empty()) {
                c.err("particles", "needs at least one particle count");
            }
            out
        }
    };
    let seeds = match c.unsigned(top, "", "seeds") {
        Some(0) => {
            c.err("seeds", "must be at least 1");
            1
        }
        Some(s) => s as usize,
        None => DEFAULT_SEEDS,
    };
    let dts = match top.get("dts") {
        None => DEFAULT_DTS.to_vec(),
        Some(v) => {
            let list = c.number_list(v, "dts").unwrap_or_default();
            for (k, x) in list.iter().enumerate() {
                if *x <= 0.0 {
                    c.err(&format!("dts[{k}]"), format!("must be positive, got {x}"));
                }
            }
            if v.as_array().is_some_and(|a| a.is_empty()) {
                c.err("dts", "needs at least one time step");
            }
            list
        }
    };

    if let Some(kind) = kind {
        let needs_dt = matches!(
            kind,
            ExperimentKind::ParticleVsKinetic | ExperimentKind::MfgVsBrs | ExperimentKind::NashVsBrs
        );
        if needs_dt && dt.is_none() && !solver.contains_key("dt") {
            c.err("solver.dt", format!("required by experiment {}", kind.name()));
        }
        if let (Some(m), Some(dt)) = (&model, dt) {
            if needs_dt {
                if let Err(e) = mfgmpc::uniform_steps(m.horizon, dt) {
                    c.err("solver.dt", e);
                }
            }
        }
        if kind == ExperimentKind::ParticleVsKinetic {
            if matches!(initial, Some(Distribution::Points(_))) {
                c.err("initial.kind", "particle_vs_kinetic samples ensembles of several sizes; points cannot be resampled");
            }
            let mut sorted = particles.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                c.err("particles", "particle counts must be distinct");
            }
        }
        if kind == ExperimentKind::NashVsBrs || kind == ExperimentKind::MpcVsBrs {
            if let (Some(Distribution::Points(p)), Some(m)) = (&initial, &model) {
                if p.len() != m.n_particles {
                    c.err(
                        "initial.positions",
                        format!("has {} positions but model.n_particles is {}", p.len(), m.n_particles),
                    );
                }
            }
        }
        if kind == ExperimentKind::MpcVsBrs {
            if let Some(m) = &model {
                for (k, dt) in dts.iter().enumerate() {
                    if *dt > 0.0 {
                        if let Err(e) = mfgmpc::uniform_steps(m.horizon, *dt) {
                            c.err(&format!("dts[{k}]"), e);
                        }
                    }
                }
            }
        }
    }

    if !c.errors.is_empty() {
        return Err(c.errors);
    }
    Ok(ExperimentConfig {
        kind: kind.unwrap(),
        seed,
        output: output.unwrap(),
        model: model.unwrap(),
        dt,
        dts,
        grid: grid.unwrap(),
        picard: picard.unwrap(),
        sweep: sweep.unwrap(),
        divergence_bound,
        initial: initial.unwrap(),
        particles,
        seeds,
        raw,
    })
}

fn parse_alpha(c: &mut Checker, v: &Value) -> Option<Alpha> {
    if let Some(a) = v.as_f64() {
        return Some(Alpha::Constant(a));
    }
    let obj = c.object(v, "model.alpha", &["offset", "slope", "coefficients"])?;
    if let Some(coeffs) = obj.get("coefficients") {
        if obj.contains_key("offset") || obj.contains_key("slope") {
            c.err("model.alpha", "give either coefficients or offset/slope, not both");
            return None;
        }
        return c.number_list(coeffs, "model.alpha.coefficients").map(Alpha::Polynomial);
    }
    let offset = c.required_number(obj, "model.alpha", "offset")?;
    let slope = c.number(obj, "model.alpha", "slope").unwrap_or(0.0);
    Some(Alpha::Affine { offset, slope })
}

fn parse_model(c: &mut Checker, v: &Value, kind: Option<ExperimentKind>) -> Option<ModelSpec> {
    let path = "model";
    let obj = c.object(v, path, &["preset", "radius", "width", "drift", "cost", "alpha", "n_particles", "horizon"])?;
    let horizon = c.positive(obj, path, "horizon", true);
    let default_n = if kind == Some(ExperimentKind::NashVsBrs) { 4 } else { 2 };
    let n = match c.unsigned(obj, path, "n_particles") {
        Some(n) if n >= 2 => Some(n as usize),
        Some(n) => {
            c.err("model.n_particles", format!("must be at least 2, got {n}"));
            None
        }
        None if obj.contains_key("n_particles") => None,
        None => Some(default_n),
    };
    let alpha = obj.get("alpha").map_or(Some(Alpha::Constant(1.0)), |a| parse_alpha(c, a));
    let preset = match obj.get("preset") {
        None => "consensus".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            c.err("model.preset", format!("expected a string, got {other}"));
            return None;
        }
    };
    let kernels = match preset.as_str() {
        "consensus" => {
            for key in ["radius", "width", "drift", "cost"] {
                if obj.contains_key(key) {
                    c.err(&join(path, key), "not used by the consensus preset");
                }
            }
            Some((PairKernel::Constant(1.0), PairKernel::Quadratic { scale: 1.0 }))
        }
        "bounded_confidence" => {
            for key in ["drift", "cost"] {
                if obj.contains_key(key) {
                    c.err(&join(path, key), "not used by the bounded_confidence preset");
                }
            }
            let radius = c.positive(obj, path, "radius", true);
            let width = c.positive(obj, path, "width", false);
            radius.map(|r| {
                let drift = match width {
                    Some(w) => PairKernel::BoundedConfidence { radius: r, width: w },
                    None => PairKernel::bounded_confidence(r),
                };
                (drift, PairKernel::Quadratic { scale: 1.0 })
            })
        }
        "custom" => {
            for key in ["radius", "width"] {
                if obj.contains_key(key) {
                    c.err(&join(path, key), "not used by the custom preset");
                }
            }
            let drift = match obj.get("drift") {
                Some(t) => c.table(t, "model.drift"),
                None => {
                    c.err("model.drift", "missing (custom preset needs a coefficient table)");
                    None
                }
            };
            let cost = match obj.get("cost") {
                Some(t) => c.table(t, "model.cost"),
                None => {
                    c.err("model.cost", "missing (custom preset needs a coefficient table)");
                    None
                }
            };
            match (drift, cost) {
                (Some(d), Some(p)) => Some((PairKernel::Polynomial(d), PairKernel::Polynomial(p))),
                _ => None,
            }
        }
        other => {
            c.err("model.preset", format!("unknown preset \"{other}\" (expected consensus, bounded_confidence or custom)"));
            None
        }
    };
    let (drift, cost) = kernels?;
    match ModelSpec::new(drift, cost, alpha?, n?, horizon?) {
        Ok(m) => Some(m),
        Err(e) => {
            c.err(path, e);
            None
        }
    }
}

fn parse_grid(c: &mut Checker, v: &Value, initial: Option<&Distribution>) -> Option<SpaceGrid> {
    let path = "solver.grid";
    let obj = c.object(v, path, &["x_min", "x_max", "cells"])?;
    let cells = match c.unsigned(obj, path, "cells") {
        Some(0) => {
            c.err("solver.grid.cells", "must be positive, got 0");
            return None;
        }
        Some(n) => n as usize,
        None if obj.contains_key("cells") => return None,
        None => DEFAULT_CELLS,
    };
    let x_min = c.number(obj, path, "x_min");
    let x_max = c.number(obj, path, "x_max");
    let grid = match (x_min, x_max, obj.contains_key("x_min") || obj.contains_key("x_max")) {
        (Some(a), Some(b), _) => SpaceGrid::new(a, b, cells),
        (None, None, false) => {
            let (lo, hi) = initial?.support();
            SpaceGrid::covering(lo, hi, cells)
        }
        _ => {
            c.err(path, "give both x_min and x_max or neither");
            return None;
        }
    };
    match grid {
        Ok(g) => {
            if let Some(d) = initial {
                let (lo, hi) = d.support();
                if lo < g.x_min() || hi > g.x_max() {
                    c.err(path, format!("grid [{}, {}] does not cover the initial support [{lo}, {hi}]", g.x_min(), g.x_max()));
                }
            }
            Some(g)
        }
        Err(e) => {
            c.err(path, e);
            None
        }
    }
}

fn parse_picard(c: &mut Checker, v: &Value) -> Option<PicardParams> {
    let path = "solver.picard";
    let obj = c.object(v, path, &["max_iterations", "tolerance", "damping"])?;
    let d = PicardParams::default();
    let params = PicardParams {
        max_iterations: c.unsigned(obj, path, "max_iterations").map_or(d.max_iterations, |n| n as usize),
        tolerance: c.number(obj, path, "tolerance").unwrap_or(d.tolerance),
        damping: c.number(obj, path, "damping").unwrap_or(d.damping),
    };
    match params.validate() {
        Ok(()) => Some(params),
        Err(e) => {
            c.err(path, e);
            None
        }
    }
}

fn parse_sweep(c: &mut Checker, v: &Value) -> Option<SweepParams> {
    let path = "solver.sweep";
    let obj = c.object(v, path, &["max_iterations", "tolerance", "relaxation"])?;
    let d = SweepParams::default();
    let params = SweepParams {
        max_iterations: c.unsigned(obj, path, "max_iterations").map_or(d.max_iterations, |n| n as usize),
        tolerance: c.number(obj, path, "tolerance").unwrap_or(d.tolerance),
        relaxation: c.number(obj, path, "relaxation").unwrap_or(d.relaxation),
    };
    match params.validate() {
        Ok(()) => Some(params),
        Err(e) => {
            c.err(path, e);
            None
        }
    }
}

fn parse_initial(c: &mut Checker, v: &Value) -> Option<Distribution> {
    let path = "initial";
    let kind = match v.get("kind") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            c.err("initial.kind", format!("expected a string, got {other}"));
            return None;
        }
        None => {
            c.err("initial.kind", "missing");
            return None;
        }
    };
    let interval = |c: &mut Checker, obj: &Map<String, Value>| -> Option<(f64, f64)> {
        let lo = c.required_number(obj, path, "lo");
        let hi = c.required_number(obj, path, "hi");
        match (lo, hi) {
            (Some(lo), Some(hi)) if lo < hi => Some((lo, hi)),
            (Some(lo), Some(hi)) => {
                c.err(path, format!("needs lo < hi, got [{lo}, {hi}]"));
                None
            }
            _ => None,
        }
    };
    match kind.as_str() {
        "uniform" => {
            let obj = c.object(v, path, &["kind", "lo", "hi"])?;
            let (lo, hi) = interval(c, obj)?;
            Some(Distribution::Uniform { lo, hi })
        }
        "gaussian_truncated" => {
            let obj = c.object(v, path, &["kind", "mean", "sd", "lo", "hi"])?;
            let mean = c.required_number(obj, path, "mean");
            let sd = c.positive(obj, path, "sd", true);
            let (lo, hi) = interval(c, obj)?;
            let d = Distribution::GaussianTruncated { mean: mean?, sd: sd?, lo, hi };
            check_acceptance(c, &d);
            Some(d)
        }
        "two_bump" => {
            let obj = c.object(v, path, &["kind", "means", "sds", "weight", "lo", "hi"])?;
            let pair = |c: &mut Checker, key: &str| -> Option<[f64; 2]> {
                let list = match obj.get(key) {
                    Some(l) => c.number_list(l, &join(path, key))?,
                    None => {
                        c.err(&join(path, key), "missing");
                        return None;
                    }
                };
                match list.as_slice() {
                    [a, b] => Some([*a, *b]),
                    _ => {
                        c.err(&join(path, key), "expected exactly two numbers");
                        None
                    }
                }
            };
            let means = pair(c, "means");
            let sds = pair(c, "sds");
            if let Some(s) = sds {
                if s.iter().any(|x| *x <= 0.0) {
                    c.err("initial.sds", "must be positive");
                }
            }
            let weight = c.number(obj, path, "weight").unwrap_or(0.5);
            if !(weight > 0.0 && weight < 1.0) {
                c.err("initial.weight", format!("must lie in (0, 1), got {weight}"));
            }
            let (lo, hi) = interval(c, obj)?;
            let d = Distribution::TwoBump { means: means?, sds: sds?, weight, lo, hi };
            if sds?.iter().all(|x| *x > 0.0) {
                check_acceptance(c, &d);
            }
            Some(d)
        }
        "points" => {
            let obj = c.object(v, path, &["kind", "positions"])?;
            let positions = match obj.get("positions") {
                Some(p) => c.number_list(p, "initial.positions")?,
                None => {
                    c.err("initial.positions", "missing");
                    return None;
                }
            };
            if positions.is_empty() {
                c.err("initial.positions", "needs at least one position");
                return None;
            }
            Some(Distribution::Points(positions))
        }
        other => {
            c.err(
                "initial.kind",
                format!("unsupported distribution \"{other}\" (expected uniform, gaussian_truncated, two_bump or points)"),
            );
            None
        }
    }
}

fn check_acceptance(c: &mut Checker, d: &Distribution) {
    let p = crate::sampling::acceptance_probability(d);
    if p < crate::sampling::MIN_ACCEPTANCE {
        c.err("initial", format!("truncation keeps only {p:.2e} of the mass; widen [lo, hi]"));
    }
}
