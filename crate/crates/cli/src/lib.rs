//! Experiment harness for the `mfgmpc` solvers: strict JSON configs, seeded sampling,
//! deterministic CSV tables and a run manifest.

pub mod config;
pub mod experiments;
pub mod output;
pub mod sampling;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{parse_config, Distribution, ExperimentConfig, ExperimentKind};
pub use experiments::StageError;
pub use output::{Report, Table};
pub use sampling::{initial_density, sample_initial};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("cannot write results to {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => EXIT_VALIDATION,
            // A run that produced no results is a failed run whichever step broke.
            RunError::Stage(_) | RunError::Output { .. } => EXIT_SOLVER,
        }
    }
}

/// Outcome of a successful run.
#[derive(Debug)]
pub struct RunSummary {
    pub output: PathBuf,
    pub files: Vec<String>,
    pub report: Report,
}

/// Runs `cfg` on a pool of `jobs` threads (rayon's default when `None`) and writes its
/// tables and manifest under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = jobs {
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| RunError::Validation(vec![format!("jobs: cannot start worker pool: {e}")]))?;
    let report = pool.install(|| experiments::run(cfg))?;
    let io = |source| RunError::Output { path: out.to_path_buf(), source };
    let files = report.write(out).map_err(io)?;
    output::write_manifest(
        out,
        &cfg.raw,
        cfg.kind.name(),
        cfg.seed,
        &files,
        &report.metrics,
        start.elapsed().as_secs_f64(),
    )
    .map_err(io)?;
    Ok(RunSummary { output: out.to_path_buf(), files, report })
}

/// Reads, validates and runs a config file. `out` and `seed` override the config's values.
pub fn run_file(path: &Path, out: Option<&Path>, seed: Option<u64>, jobs: Option<usize>) -> Result<RunSummary, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Validation(vec![format!("cannot read {}: {e}", path.display())]))?;
    let mut cfg = parse_config(&text).map_err(RunError::Validation)?;
    if jobs == Some(0) {
        return Err(RunError::Validation(vec!["--jobs: must be at least 1".into()]));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.map_or_else(|| cfg.output.clone(), Path::to_path_buf);
    run_experiment(&cfg, &out, jobs)
}
