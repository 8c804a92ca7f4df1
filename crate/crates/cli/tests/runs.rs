use std::fs;
use std::path::Path;
use std::process::Command;

use mfgmpc_cli::{parse_config, run_experiment, ExperimentKind, EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION};
use serde_json::Value;

const PARTICLES: &str = r#"{
    "experiment": "particle_vs_kinetic",
    "seed": 5,
    "model": {"preset": "consensus", "horizon": 0.25},
    "solver": {"dt": 0.005, "grid": {"cells": 64}},
    "initial": {"kind": "gaussian_truncated", "mean": 0.5, "sd": 0.15, "lo": 0.0, "hi": 1.0},
    "particles": [16, 64, 256],
    "seeds": 3
}"#;

const NASH: &str = r#"{
    "experiment": "nash_vs_brs",
    "model": {"preset": "consensus", "n_particles": 4, "horizon": 1.0},
    "solver": {"dt": 0.01},
    "initial": {"kind": "points", "positions": [0.0, 0.0, 1.0, 1.0]}
}"#;

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "cells"] {
        let Ok(entries) = fs::read_dir(dir.join(sub)) else { continue };
        let mut paths: Vec<_> = entries.map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect();
        paths.sort();
        for p in paths {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfgmpc"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let cfg = parse_config(PARTICLES).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_experiment(&cfg, &a, Some(1)).unwrap();
    run_experiment(&cfg, &b, Some(4)).unwrap();
    let (ba, bb) = (csv_bytes(&a), csv_bytes(&b));
    assert_eq!(ba.len(), 4);
    assert_eq!(ba, bb);
}

#[test]
fn seed_override_changes_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), PARTICLES);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    mfgmpc_cli::run_file(&path, Some(&a), None, Some(2)).unwrap();
    mfgmpc_cli::run_file(&path, Some(&b), Some(6), Some(2)).unwrap();
    assert_ne!(csv_bytes(&a), csv_bytes(&b));
}

#[test]
fn particle_vs_kinetic_emits_one_row_per_size() {
    let cfg = parse_config(PARTICLES).unwrap();
    assert_eq!(cfg.kind, ExperimentKind::ParticleVsKinetic);
    let tmp = tempfile::tempdir().unwrap();
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    let table = run.report.table("particle_vs_kinetic").unwrap();
    assert_eq!(table.column("n_particles").unwrap(), vec!["16", "64", "256"]);
    assert!(table.column("seeds").unwrap().iter().all(|s| *s == "3"));
    for w in table.column("mean_w1").unwrap() {
        let w: f64 = w.parse().unwrap();
        assert!(w > 0.0 && w < 0.2, "{w}");
    }
    let written = fs::read_to_string(tmp.path().join("particle_vs_kinetic.csv")).unwrap();
    assert!(written.starts_with("n_particles,seeds,mean_w1,std_w1,min_w1,max_w1\n"));
    assert_eq!(written.lines().count(), 4);
    assert_eq!(run.report.cells.len(), 3);
}

#[test]
fn nash_vs_brs_reports_each_particle_and_the_max() {
    let cfg = parse_config(NASH).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    let table = run.report.table("nash_vs_brs").unwrap();
    assert_eq!(table.column("particle").unwrap(), vec!["0", "1", "2", "3", "max"]);
    let gaps: Vec<f64> = table.column("abs_control_gap").unwrap().iter().map(|s| s.parse().unwrap()).collect();
    let max = gaps[..4].iter().cloned().fold(0.0, f64::max);
    assert_eq!(gaps[4], max);
    assert!(max > 0.0);
    for row in &table.rows[..4] {
        let u_nash: f64 = row[2].parse().unwrap();
        let u_brs: f64 = row[3].parse().unwrap();
        assert_eq!((u_nash - u_brs).abs(), row[4].parse::<f64>().unwrap());
        // The game's controls anticipate contraction and start gentler than the myopic ones.
        assert!(u_nash.abs() < u_brs.abs());
        let (vn, vb): (f64, f64) = (row[5].parse().unwrap(), row[6].parse().unwrap());
        assert!(vn <= vb + 1e-6, "{vn} > {vb}");
    }
}

#[test]
fn manifest_echoes_config_and_lists_files() {
    let cfg = parse_config(NASH).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&cfg, tmp.path(), None).unwrap();
    let manifest: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"], cfg.raw);
    assert_eq!(manifest["experiment"], "nash_vs_brs");
    assert!(manifest["version"].as_str().unwrap().contains(env!("CARGO_PKG_VERSION")));
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert_eq!(files, vec!["nash_vs_brs.csv", "nash_sweep.csv"]);
    assert!(manifest["metrics"]["sweep_residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn exit_code_zero_on_success() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), NASH);
    let out = binary().args(["run"]).arg(&path).arg("--out").arg(tmp.path().join("out")).args(["--jobs", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("out/nash_vs_brs.csv").exists());
}

#[test]
fn exit_code_two_on_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &NASH.replace("\"dt\": 0.01", "\"dt\": 0").replace("\"solver\"", "\"diffusion\": 1, \"solver\""));
    let out = binary().arg("run").arg(&path).arg("--out").arg(tmp.path().join("out")).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("solver.dt") && stderr.contains("diffusion"), "{stderr}");
    assert!(!tmp.path().join("out").exists(), "nothing is computed or written on invalid input");

    let missing = binary().arg("run").arg(tmp.path().join("absent.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_VALIDATION));
    let usage = binary().arg("walk").output().unwrap();
    assert_eq!(usage.status.code(), Some(EXIT_VALIDATION));
}

#[test]
fn exit_code_three_names_the_failing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let capped = NASH.replace("\"dt\": 0.01", "\"dt\": 0.01, \"sweep\": {\"max_iterations\": 2}");
    let path = write_config(tmp.path(), &capped);
    let out = binary().arg("run").arg(&path).arg("--out").arg(tmp.path().join("out")).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_SOLVER));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage nash") && stderr.contains("did not converge"), "{stderr}");

    // Steps far beyond the transport CFL bound.
    let coarse = PARTICLES.replace("\"dt\": 0.005", "\"dt\": 0.25").replace("\"cells\": 64", "\"cells\": 512");
    let path = write_config(tmp.path(), &coarse);
    let out = binary().arg("run").arg(&path).arg("--out").arg(tmp.path().join("out2")).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_SOLVER));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage kinetic") && stderr.contains("CFL"), "{stderr}");
}

#[test]
fn example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        parse_config(&text).unwrap_or_else(|e| panic!("{}: {e:?}", path.display()));
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn every_kind_is_deterministic() {
    let configs = [
        r#"{"experiment": "mpc_vs_brs", "seed": 9,
            "model": {"preset": "consensus", "alpha": {"offset": 1, "slope": 1}, "n_particles": 6, "horizon": 1},
            "solver": {}, "initial": {"kind": "uniform", "lo": -1, "hi": 1}}"#,
        r#"{"experiment": "mfg_vs_brs",
            "model": {"preset": "bounded_confidence", "radius": 0.4, "horizon": 0.2},
            "solver": {"dt": 0.01, "grid": {"cells": 48}},
            "initial": {"kind": "two_bump", "means": [0.3, 0.7], "sds": [0.1, 0.1], "lo": 0, "hi": 1}}"#,
        r#"{"experiment": "short_horizon_gap",
            "model": {"preset": "consensus", "horizon": 1},
            "solver": {"grid": {"cells": 48}}, "dts": [0.1, 0.05],
            "initial": {"kind": "uniform", "lo": 0, "hi": 1}}"#,
    ];
    for text in configs {
        let cfg = parse_config(text).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        run_experiment(&cfg, &tmp.path().join("a"), Some(1)).unwrap();
        run_experiment(&cfg, &tmp.path().join("b"), Some(3)).unwrap();
        let a = csv_bytes(&tmp.path().join("a"));
        assert!(!a.is_empty());
        assert_eq!(a, csv_bytes(&tmp.path().join("b")), "{}", cfg.kind.name());
    }
}

#[test]
fn mpc_gap_halves_with_the_step() {
    let cfg = parse_config(
        r#"{"experiment": "mpc_vs_brs",
            "model": {"preset": "consensus", "alpha": {"offset": 1, "slope": 1}, "n_particles": 5, "horizon": 1},
            "solver": {}, "initial": {"kind": "uniform", "lo": 0, "hi": 1}}"#,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let run = run_experiment(&cfg, tmp.path(), None).unwrap();
    let ratios = run.report.table("mpc_vs_brs").unwrap().column("control_gap_ratio").unwrap();
    assert_eq!(ratios[0], "");
    for r in &ratios[1..] {
        let r: f64 = r.parse().unwrap();
        assert!((1.8..=2.2).contains(&r), "{r}");
    }
}
