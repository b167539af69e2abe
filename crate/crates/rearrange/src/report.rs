use std::path::{Path, PathBuf};

use rearrange_core::traineval::{EvalReport, ExampleRecord};

use crate::error::{CliError, CliResult};
use crate::fsutil;

/// The published JSON schema for evaluation reports.
pub const EVAL_REPORT_SCHEMA: &str = include_str!("../schema/eval_report.schema.json");

/// Paths of the text table and per-example log written beside a report.
pub fn companion_paths(report: &Path) -> (PathBuf, PathBuf) {
    (report.with_extension("txt"), report.with_extension("examples.jsonl"))
}

pub fn report_json(report: &EvalReport) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn records_jsonl(records: &[ExampleRecord]) -> CliResult<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes the JSON report, its text table and the per-example records.
/// Returns every path written.
pub fn write_report(path: &Path, report: &EvalReport, records: &[ExampleRecord]) -> CliResult<Vec<PathBuf>> {
    let (table, log) = companion_paths(path);
    fsutil::write_atomic(path, report_json(report)?.as_bytes())?;
    fsutil::write_atomic(&table, report.to_table().as_bytes())?;
    fsutil::write_atomic(&log, records_jsonl(records)?.as_bytes())?;
    Ok(vec![path.to_path_buf(), table, log])
}

pub fn read_report(path: &Path) -> CliResult<EvalReport> {
    let text = fsutil::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
