//! Run reports and CSV emission.
//!
//! CSV files carry the numeric results and are byte-reproducible for a fixed
//! (config, seed); the JSON report wraps them with provenance (config hash,
//! version, wall time, column descriptions, warnings).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Column description embedded in the report: name, unit, and provenance
/// (e.g. "exact", "monte-carlo +- stderr", "mesh-estimate").
#[derive(Debug, Clone, Serialize)]
pub struct ColumnDesc {
    pub name: String,
    pub unit: String,
    pub provenance: String,
}

impl ColumnDesc {
    pub fn new(name: &str, unit: &str, provenance: &str) -> Self {
        Self { name: name.into(), unit: unit.into(), provenance: provenance.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableDesc {
    pub file: String,
    pub rows: usize,
    pub columns: Vec<ColumnDesc>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub enabled: bool,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Report envelope written as `report.json` next to the CSV tables.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub subcommand: String,
    pub config_name: Option<String>,
    pub config_sha256: String,
    pub version: String,
    /// Worker-thread cap the run was invoked with; outputs are identical for
    /// every value.
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub tables: Vec<TableDesc>,
    /// Named scalar results (deterministic given config and seeds).
    pub metrics: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub check: CheckOutcome,
}

impl RunReport {
    pub fn new(
        subcommand: &str,
        config_name: Option<String>,
        config_sha256: String,
        threads: usize,
    ) -> Self {
        Self {
            subcommand: subcommand.into(),
            config_name,
            config_sha256,
            version: env!("CARGO_PKG_VERSION").into(),
            threads,
            wall_time_seconds: 0.0,
            tables: Vec::new(),
            metrics: Vec::new(),
            warnings: Vec::new(),
            check: CheckOutcome { enabled: false, passed: true, failures: Vec::new() },
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn warn(&mut self, warning: &str) {
        self.warnings.push(warning.into());
    }

    /// Record one acceptance-style check when `--check` is active.
    pub fn check_assert(&mut self, enabled: bool, ok: bool, description: &str) {
        if enabled {
            self.check.enabled = true;
            if !ok {
                self.check.passed = false;
                self.check.failures.push(description.into());
            }
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("report.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Numerical(format!("report serialization: {e}")))?;
        std::fs::write(&path, json)
            .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Deterministic CSV writer: shortest round-trip float formatting, no
/// locale, unix newlines.
pub struct CsvTable {
    file: String,
    columns: Vec<ColumnDesc>,
    lines: Vec<String>,
}

impl CsvTable {
    pub fn new(file: &str, columns: Vec<ColumnDesc>) -> Self {
        Self { file: file.into(), columns, lines: Vec::new() }
    }

    pub fn row(&mut self, values: &[CsvValue]) {
        assert_eq!(values.len(), self.columns.len(), "row width mismatch in {}", self.file);
        let line = values.iter().map(CsvValue::render).collect::<Vec<_>>().join(",");
        self.lines.push(line);
    }

    /// Write the file and register it in the report.
    pub fn finish(self, out_dir: &Path, report: &mut RunReport) -> Result<PathBuf, CliError> {
        let path = out_dir.join(&self.file);
        let mut buf = String::new();
        buf.push_str(
            &self.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>().join(","),
        );
        buf.push('\n');
        for line in &self.lines {
            buf.push_str(line);
            buf.push('\n');
        }
        let mut file = std::fs::File::create(&path)
            .map_err(|e| CliError::Numerical(format!("cannot create {}: {e}", path.display())))?;
        file.write_all(buf.as_bytes())
            .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))?;
        report.tables.push(TableDesc {
            file: self.file,
            rows: self.lines.len(),
            columns: self.columns,
        });
        Ok(path)
    }
}

pub enum CsvValue {
    Float(f64),
    Int(i64),
    Bool(bool),
}

impl CsvValue {
    fn render(&self) -> String {
        match self {
            // Display for f64 is the shortest representation that round-trips,
            // which keeps reruns byte-identical
            Self::Float(v) => format!("{v}"),
            Self::Int(v) => format!("{v}"),
            Self::Bool(b) => format!("{b}"),
        }
    }
}
