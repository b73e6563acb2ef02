//! Trace CSVs and JSON reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use ttsa_core::schedule::{RunTrace, TraceRecord};

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str = "run_id,algo,seed,t,samples,theta_err_sq,tracking_err_sq,objective,grad_norm_sq";

/// Scientific notation with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn csv_row(run_id: usize, algo: &str, seed: u64, r: &TraceRecord) -> String {
    format!(
        "{run_id},{algo},{seed},{},{},{},{},{},{}",
        r.t,
        r.samples,
        optional(r.theta_err_sq),
        format_float(r.tracking_err_sq),
        format_float(r.objective),
        format_float(r.grad_norm_sq),
    )
}

pub fn trace_csv(run_id: usize, seed: u64, trace: &RunTrace) -> String {
    let algo = trace.algorithm.name();
    let mut out = String::with_capacity(96 * (trace.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(out, "{}", csv_row(run_id, algo, seed, r));
    }
    out
}

pub fn csv_name(seed: u64) -> String {
    format!("run_{seed}.csv")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
    text.push('\n');
    text
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    Ok(dir.to_path_buf())
}
