use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::config::{Protocol, ScenarioConfig};
use crate::error::Result;

/// A CSV-backed result table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    /// File name the table is written to.
    pub file: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(file: &str, columns: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// CSV body with a header row and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Headline scalars of one gate re-run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateRun {
    pub fock_cutoff: usize,
    pub tolerance: f64,
    pub headline: BTreeMap<String, f64>,
    pub max_abs_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateRecord {
    pub threshold: f64,
    pub cutoff_rerun: GateRun,
    pub tolerance_rerun: GateRun,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub protocol: Protocol,
    pub config: ScenarioConfig,
    pub derived_constants: BTreeMap<String, f64>,
    /// Headline scalars; maxima come with their time under a `t_` key.
    pub headline: BTreeMap<String, f64>,
    pub tables: Vec<Table>,
    pub convergence_gate: Option<GateRecord>,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

impl Report {
    pub fn new(config: &ScenarioConfig) -> Self {
        Self {
            protocol: config.protocol,
            config: config.clone(),
            derived_constants: BTreeMap::new(),
            headline: BTreeMap::new(),
            tables: Vec::new(),
            convergence_gate: None,
            notes: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.headline.get(key).copied()
    }

    pub fn gate_passed(&self) -> bool {
        self.convergence_gate.as_ref().map_or(true, |g| g.passed)
    }

    /// Writes `report.json` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json)?;
        for t in &self.tables {
            let mut f = std::fs::File::create(dir.join(&t.file))?;
            f.write_all(t.to_csv().as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_seventeen_significant_digits() {
        let mut t = Table::new("x.csv", &["a", "b"]);
        t.push(vec![0.1, -2.5e-7]);
        let csv = t.to_csv();
        assert_eq!(csv, "a,b\n1.0000000000000001e-1,-2.4999999999999999e-7\n");
        // every cell parses back to the identical double
        for cell in csv.lines().nth(1).unwrap().split(',') {
            let v: f64 = cell.parse().unwrap();
            assert_eq!(format_value(v), cell);
        }
        assert_eq!("-2.4999999999999999e-7".parse::<f64>().unwrap(), -2.5e-7);
        assert_eq!(t.column("b").unwrap(), vec![-2.5e-7]);
    }
}
