//! File plumbing: atomic writes, CSV panels with 17-significant-digit
//! floats, and typed JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use arbfree::lattice::fmt_f64;
use arbfree::linalg::Mat;

use crate::CliError;

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("create {dir:?}: {e}")))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents).map_err(|e| CliError::config(format!("write {tmp:?}: {e}")))?;
    fs::rename(&tmp, path).map_err(|e| CliError::config(format!("rename to {path:?}: {e}")))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("serialize {path:?}: {e}")))?;
    write_atomic(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::config(format!("read {path:?}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("parse {path:?}: {e}")))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("read {path:?}: {e}")))
}

/// CSV panel with named columns, one row per record.
pub fn panel_csv(headers: &[&str], columns: &[&[f64]]) -> String {
    assert_eq!(headers.len(), columns.len());
    let rows = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == rows));
    let mut out = headers.join(",");
    out.push('\n');
    for r in 0..rows {
        let mut first = true;
        for col in columns {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt_f64(col[r]));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Matrix CSV with a time index column and one named column per matrix
/// column.
pub fn mat_csv(time: &[f64], prefix: &str, m: &Mat) -> String {
    assert_eq!(time.len(), m.nrows());
    let mut out = String::from("time");
    for k in 0..m.ncols() {
        out.push_str(&format!(",{prefix}{}", k + 1));
    }
    out.push('\n');
    for l in 0..m.nrows() {
        out.push_str(&fmt_f64(time[l]));
        for v in m.row(l) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parse a CSV produced by [`mat_csv`]: returns the time column and panel.
pub fn parse_mat_csv(text: &str) -> Result<(Vec<f64>, Mat), CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::config("empty CSV".into()))?;
    let n_cols = header.split(',').count() - 1;
    let mut time = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse()).collect();
        let cells =
            cells.map_err(|e| CliError::config(format!("CSV line {}: {e}", ln + 2)))?;
        if cells.len() != n_cols + 1 {
            return Err(CliError::config(format!(
                "CSV line {} has {} cells, expected {}",
                ln + 2,
                cells.len(),
                n_cols + 1
            )));
        }
        time.push(cells[0]);
        rows.push(cells[1..].to_vec());
    }
    Ok((time, Mat::from_rows(&rows)))
}
