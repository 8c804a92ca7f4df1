//! CSV tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A result table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem; the table is written to `<name>.csv`.
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: Vec<&'static str>) -> Self {
        Self { name: name.into(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    /// Column `name` of every row, as written.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Summary tables, written to the output directory.
    pub tables: Vec<Table>,
    /// Per-cell tables, written to `cells/`.
    pub cells: Vec<Table>,
    /// Scalar summaries echoed into the manifest.
    pub metrics: Map<String, Value>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes all tables, returning their paths relative to `dir` in write order.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for t in &self.tables {
            t.write(dir)?;
            files.push(format!("{}.csv", t.name));
        }
        if !self.cells.is_empty() {
            let cells = dir.join("cells");
            fs::create_dir_all(&cells)?;
            for t in &self.cells {
                t.write(&cells)?;
                files.push(format!("cells/{}.csv", t.name));
            }
        }
        Ok(files)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Manifest with the config echo, code version and wall-clock time. The only file of a run
/// whose bytes vary between identical runs.
pub fn write_manifest(
    dir: &Path,
    config: &Value,
    experiment: &str,
    seed: u64,
    files: &[String],
    metrics: &Map<String, Value>,
    wall_clock_seconds: f64,
) -> std::io::Result<()> {
    let manifest = json!({
        "experiment": experiment,
        "seed": seed,
        "version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "wall_clock_seconds": wall_clock_seconds,
        "config": config,
        "files": files,
        "metrics": metrics,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join(MANIFEST), text + "\n")
}
