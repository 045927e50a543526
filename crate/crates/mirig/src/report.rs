//! Sweep results and their CSV / JSON / SVG renderings.

use std::fs;
use std::path::{Path, PathBuf};

use mirig_core::error::{Error, Result};
use mirig_core::objective::BOUND_SLACK_BITS;
use serde::{Deserialize, Serialize};

use crate::plot::Figure;

/// One (training cell, probe task) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_id: String,
    pub seed: u64,
    pub k_tr: usize,
    pub strength: Option<f32>,
    /// Training pairing.
    pub pairing: String,
    /// Probe task, also the estimation task for same-class estimates.
    pub task: String,
    /// External negative source; empty for in-batch negatives.
    pub negatives: String,
    pub probe_accuracy: Option<f64>,
    pub in_training_bits: Option<f64>,
    pub mi_bits: Option<f64>,
    pub k_est: Option<usize>,
    pub bound_bits: Option<f64>,
    pub class_entropy_bits: Option<f64>,
    pub theorem_status: Option<String>,
}

impl ReportRow {
    /// Estimate within the ceiling of its estimation batch size.
    pub fn bound_ok(&self) -> bool {
        match (self.mi_bits, self.bound_bits) {
            (Some(b), Some(cap)) => b <= cap + BOUND_SLACK_BITS,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    pub pearson: Option<f64>,
    pub kendall: Option<f64>,
}

/// An invariant (`fatal`) or an observation about the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub fatal: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub provenance: String,
    pub code_version: String,
    pub rows: Vec<ReportRow>,
    pub correlations: Vec<Correlation>,
    pub checks: Vec<Check>,
    pub findings: Vec<String>,
    pub warnings: Vec<String>,
    pub figures: Vec<Figure>,
}

impl RunReport {
    pub fn new(scenario: &str, provenance: String) -> Self {
        Self {
            scenario: scenario.to_string(),
            provenance,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            rows: Vec::new(),
            correlations: Vec::new(),
            checks: Vec::new(),
            findings: Vec::new(),
            warnings: Vec::new(),
            figures: Vec::new(),
        }
    }

    /// False if any fatal check failed.
    pub fn valid(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.fatal)
    }

    pub fn check(&mut self, name: &str, fatal: bool, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            pass,
            fatal,
            detail,
        });
    }

    /// Adds the per-row ceiling check every report carries.
    pub fn check_bounds(&mut self) {
        let bad: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !r.bound_ok())
            .map(|r| format!("{}/{}: {:?} > {:?}", r.config_id, r.task, r.mi_bits, r.bound_bits))
            .collect();
        let detail = if bad.is_empty() {
            format!("{} rows within log2(2K-1)", self.rows.len())
        } else {
            bad.join("; ")
        };
        self.check("bound", true, bad.is_empty(), detail);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Json, Format::Svg];
}

pub const CSV_FILE: &str = "results.csv";
pub const JSON_FILE: &str = "report.json";

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    // serde can't emit a header for an empty row list
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected csv header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Column order of `results.csv`; matches the field order of [`ReportRow`].
pub const CSV_COLUMNS: [&str; 14] = [
    "config_id",
    "seed",
    "k_tr",
    "strength",
    "pairing",
    "task",
    "negatives",
    "probe_accuracy",
    "in_training_bits",
    "mi_bits",
    "k_est",
    "bound_bits",
    "class_entropy_bits",
    "theorem_status",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Writes the requested formats into `dir` and returns the paths written.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Csv => {
                let p = dir.join(CSV_FILE);
                fs::write(&p, rows_to_csv(&report.rows)?)?;
                written.push(p);
            }
            Format::Json => {
                let p = dir.join(JSON_FILE);
                let mut json = serde_json::to_vec_pretty(report)?;
                json.push(b'\n');
                fs::write(&p, json)?;
                written.push(p);
            }
            Format::Svg => {
                for fig in &report.figures {
                    let p = dir.join(format!("{}.svg", fig.name));
                    fs::write(&p, fig.to_svg())?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
