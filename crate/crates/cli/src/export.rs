//! Atomic file output and time-series serialization.
//!
//! CSV floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every finite double. JSON uses the shortest representation that round-trips.

use std::io::Write;
use std::path::Path;

use dnls_core::diagnostics::{csv_columns, csv_values, DiagnosticRecord, DiagnosticsSpec};

use crate::config::Format;
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the target directory and renames it into
/// place, so the final path never holds a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn timeseries_csv(spec: &DiagnosticsSpec, records: &[DiagnosticRecord]) -> String {
    let mut out = csv_columns(spec).join(",");
    out.push('\n');
    for rec in records {
        let row: Vec<String> = csv_values(rec).into_iter().map(format_float).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One object per record, keyed by the CSV column names.
pub fn timeseries_json(spec: &DiagnosticsSpec, records: &[DiagnosticRecord]) -> serde_json::Value {
    let cols = csv_columns(spec);
    let rows = records
        .iter()
        .map(|rec| {
            let obj: serde_json::Map<String, serde_json::Value> = cols
                .iter()
                .cloned()
                .zip(csv_values(rec).into_iter().map(serde_json::Value::from))
                .collect();
            serde_json::Value::Object(obj)
        })
        .collect();
    serde_json::json!({ "columns": cols, "records": serde_json::Value::Array(rows) })
}

pub fn export_timeseries(
    spec: &DiagnosticsSpec,
    records: &[DiagnosticRecord],
    format: Format,
    path: &Path,
) -> Result<(), CliError> {
    if records.is_empty() {
        return Err(CliError::Usage("cannot export an empty trajectory".into()));
    }
    match format {
        Format::Csv => write_atomic(path, timeseries_csv(spec, records).as_bytes()),
        Format::Json => write_json(path, &timeseries_json(spec, records)),
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Header and rows of a CSV written by [`timeseries_csv`].
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty file")?.split(',').map(String::from).collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
                .collect::<Result<_, _>>()?;
            if row.len() != header.len() {
                return Err(format!("row {}: {} values for {} columns", i + 1, row.len(), header.len()));
            }
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}
