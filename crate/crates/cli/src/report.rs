use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};

pub const VERSION: &str = concat!("reduced-bpre ", env!("CARGO_PKG_VERSION"));

pub const REPORT_HEADER: &str = "scenario,theorem,n,k,r,t,accepted,statistic,value,ci_low,ci_high,reference,pass";

/// One report line. `pass` is `None` for informational rows, which do not
/// affect the exit code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub scenario: String,
    pub theorem: String,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub t: f64,
    pub accepted: u64,
    pub statistic: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reference: String,
    pub pass: Option<bool>,
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Row {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            field(&self.scenario),
            field(&self.theorem),
            self.n,
            self.k,
            self.r,
            self.t,
            self.accepted,
            field(&self.statistic),
            self.value,
            self.ci_low,
            self.ci_high,
            field(&self.reference),
            self.pass.map_or(String::new(), |p| p.to_string())
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no result rows to report")]
    Empty,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Exit status of a finished run: 0 when every acceptance row passes,
/// 1 otherwise.
pub fn exit_code(rows: &[Row]) -> i32 {
    if rows.iter().any(|r| r.pass == Some(false)) {
        1
    } else {
        0
    }
}

pub fn failing(rows: &[Row]) -> impl Iterator<Item = &Row> {
    rows.iter().filter(|r| r.pass == Some(false))
}

#[derive(Serialize)]
struct JsonReport<'a> {
    version: &'a str,
    config: &'a RunConfig,
    rows: &'a [Row],
}

pub fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), ReportError> {
    let mut buf = Vec::new();
    body(&mut buf).and_then(|_| fs::write(path, &buf)).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `emit_report`: writes `report.csv` or `report.json` into the output
/// directory and returns its path.
pub fn emit_report(rows: &[Row], cfg: &RunConfig, format: OutputFormat) -> Result<PathBuf, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|source| ReportError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    match format {
        OutputFormat::Csv => {
            let path = cfg.out_dir.join("report.csv");
            write_file(&path, |w| {
                writeln!(w, "# {VERSION}")?;
                for line in cfg.to_canonical().lines() {
                    writeln!(w, "# {line}")?;
                }
                writeln!(w, "{REPORT_HEADER}")?;
                for r in rows {
                    writeln!(w, "{}", r.to_csv())?;
                }
                Ok(())
            })?;
            Ok(path)
        }
        OutputFormat::Json => {
            let path = cfg.out_dir.join("report.json");
            let doc = JsonReport {
                version: VERSION,
                config: cfg,
                rows,
            };
            write_file(&path, |w| {
                serde_json::to_writer_pretty(&mut *w, &doc).map_err(std::io::Error::other)?;
                writeln!(w)
            })?;
            Ok(path)
        }
    }
}
