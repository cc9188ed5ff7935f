//! Run reports, CSV tables and the file manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

pub const REPORT_SCHEMA: &str = "ma-boundary/run-report/1";
pub const MANIFEST_SCHEMA: &str = "ma-boundary/manifest/1";
pub const CSV_SCHEMA_LINE: &str = "#schema=1";

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    /// Signed distance to the threshold, positive when passing.
    pub margin: f64,
}

impl Check {
    /// Passes when `value > threshold` (or `>=` if `inclusive`).
    pub fn above(name: &str, value: f64, threshold: f64, inclusive: bool) -> Self {
        let pass = if inclusive { value >= threshold } else { value > threshold };
        Self {
            name: name.into(),
            pass,
            value,
            threshold,
            margin: value - threshold,
        }
    }

    /// Passes when `value <= threshold`.
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= threshold,
            value,
            threshold,
            margin: threshold - value,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub role: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub details: Value,
    pub files: Vec<FileEntry>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

pub type Row = Vec<String>;

/// Shortest round-trip formatting, so reruns are byte-identical.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Collects emitted files under one output directory.
#[derive(Debug)]
pub struct Output {
    pub dir: PathBuf,
    pub files: Vec<FileEntry>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn record(&mut self, name: &str, role: &'static str) {
        if !self.files.iter().any(|f| f.path == name) {
            self.files.push(FileEntry { path: name.into(), role });
        }
    }

    pub fn write(&mut self, name: &str, role: &'static str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.record(name, role);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, role: &'static str, header: &[&str], rows: &[Row]) -> Result<()> {
        let mut s = String::new();
        s.push_str(CSV_SCHEMA_LINE);
        s.push('\n');
        s.push_str(&header.join(","));
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, role, s.as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, role: &'static str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        s.push('\n');
        self.write(name, role, s.as_bytes())
    }

    /// Write `report.json` and `manifest.json`; both list every file.
    pub fn finish(&mut self, report: &mut RunReport) -> Result<()> {
        self.record("report.json", "report");
        self.record("manifest.json", "manifest");
        report.files = self.files.clone();
        self.json("report.json", "report", report)?;
        let manifest = serde_json::json!({
            "schema": MANIFEST_SCHEMA,
            "files": self.files,
        });
        self.json("manifest.json", "manifest", &manifest)
    }
}
