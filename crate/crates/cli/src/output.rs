//! Artifact writers. Every file is written to a temporary sibling and renamed
//! into place, so readers never observe a partial file.

use std::io::Write;
use std::path::Path;

use gaps::system::Trajectory;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Column layout version of `trace.csv`.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Internal(format!("csv encoding failed: {e}"))
}

/// Columns `t, x0.., u0.., theta0.., cost, grad_norm`; `grad_norm` is empty
/// for steps without a gradient estimate.
pub fn trace_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let (n, m, d) = traj
        .steps
        .first()
        .map(|s| (s.x.len(), s.u.len(), s.theta.len()))
        .unwrap_or((0, 0, 0));
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..d).map(|i| format!("theta{i}")));
    header.push("cost".into());
    header.push("grad_norm".into());
    w.write_record(&header).map_err(csv_error)?;
    let mut row = Vec::with_capacity(header.len());
    for step in &traj.steps {
        row.clear();
        row.push(step.t.to_string());
        row.extend(step.x.iter().chain(&step.u).chain(&step.theta).map(|&v| fmt_f64(v)));
        row.push(fmt_f64(step.cost));
        row.push(
            step.grad
                .as_ref()
                .map(|g| fmt_f64(gaps::linalg::norm(g)))
                .unwrap_or_default(),
        );
        w.write_record(&row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

/// One header row and one row per entry, cells already formatted.
pub fn table_csv(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}
