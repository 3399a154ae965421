//! Deterministic report writers: CSV, pretty JSON, and gnuplot-style
//! boxplot data files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use mfs_core::stats::FiveNumber;

use crate::error::CliError;

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// One gnuplot boxplot row: label + five-number summary.
#[derive(Debug, Clone)]
pub struct BoxplotRow {
    pub label: String,
    pub five: FiveNumber,
}

/// `# label min q1 median q3 max` followed by one whitespace-separated
/// row per entry.
pub fn boxplot_dat(rows: &[BoxplotRow]) -> String {
    let mut s = String::from("# label min q1 median q3 max\n");
    for r in rows {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            r.label, r.five.min, r.five.q1, r.five.median, r.five.q3, r.five.max
        ));
    }
    s
}
