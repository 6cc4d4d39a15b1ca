use std::io::{BufRead, Write};

use super::run::StepRecord;
use super::CliError;

pub const REPORT_HEADER: [&str; 9] = [
    "step",
    "task_id",
    "location",
    "feature",
    "accuracy",
    "stale",
    "rate",
    "next_rate",
    "sample_count",
];

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<StepRecord>, CliError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| CliError::Io(format!("result line {}: {e}", i + 1)))?;
        records.push(r);
    }
    Ok(records)
}

/// Per-task accuracy and rate time series as CSV, ordered by task then step.
pub fn write_report<W: Write>(writer: W, records: &[StepRecord]) -> Result<(), CliError> {
    let mut sorted: Vec<&StepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.task_id, r.step));
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in sorted {
        w.write_record([
            r.step.to_string(),
            r.task_id.to_string(),
            r.location.clone(),
            r.feature.name().to_string(),
            r.accuracy.map_or(String::new(), |a| a.to_string()),
            r.stale.to_string(),
            r.rate.to_string(),
            r.next_rate.to_string(),
            r.sample_count.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
