use std::fs;
use std::io::Write;
use std::path::Path;

use dejavu_core::audit::RecordRow;
use dejavu_core::metrics::GapCurve;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const PER_RECORD_HEADER: [&str; 9] = [
    "id",
    "p_A",
    "r_A",
    "f_A",
    "p_B",
    "r_B",
    "f_B",
    "n_correct_A",
    "min_dist",
];
pub const CURVE_HEADER: [&str; 5] = ["sort_key", "L", "precision_gap", "recall_gap", "f_score_gap"];

pub fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e)),
        _ => Ok(()),
    }
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

/// One compact JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, values: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, &v).expect("value serializes");
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    create_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| CliError::output(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::output(path, e))
}

/// CSV with an explicit header; rows serialize positionally.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::output(path, e);
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::output(path, e))?;
    write_bytes(path, &bytes)
}

pub fn write_per_record(path: &Path, rows: &[RecordRow]) -> CliResult<()> {
    write_csv(path, &PER_RECORD_HEADER, rows)
}

pub fn write_curve(path: &Path, curve: &GapCurve) -> CliResult<()> {
    let key = curve.sort_key.as_str();
    write_csv(
        path,
        &CURVE_HEADER,
        curve
            .points
            .iter()
            .map(|p| (key, p.l, p.precision_gap, p.recall_gap, p.f_score_gap)),
    )
}
