//! CSV and JSON result files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, SimError};

use super::sweeps::{write_atomic, Record, SweepResult};

pub const CSV_HEADER: &str =
    "sweep_var,sweep_value,user_id,nmse_paper,nmse_consistent,nmse_mc_mean,nmse_mc_stderr,baseline,iterations,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(SimError::Config(format!("unknown output format {other:?}"))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn to_csv(result: &SweepResult) -> String {
    records_to_csv(&result.records)
}

pub fn records_to_csv(records: &[Record]) -> String {
    let mut out = String::with_capacity(128 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.sweep_var,
            num(Some(r.sweep_value)),
            r.user_id,
            num(r.nmse_paper),
            num(r.nmse_consistent),
            num(r.nmse_mc_mean),
            num(r.nmse_mc_stderr),
            num(r.baseline),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.seed
        );
    }
    out
}

pub fn emit_results(result: &SweepResult, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv(result),
        Format::Json => serde_json::to_string_pretty(result).expect("result serializes"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| SimError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    write_atomic(path, &text)
}

pub fn read_json(path: &Path) -> Result<SweepResult> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SimError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
