//! Matrix text formats: CSV (rows newline-separated) and JSON
//! (`{"n": int, "entries": row-major array}`). Both parsers reject
//! non-square data.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

#[derive(Debug, Serialize, Deserialize)]
struct MatrixJson {
    n: usize,
    entries: Vec<f64>,
}

pub fn parse_matrix_csv(text: &str) -> Result<RealMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: bad number {:?}: {e}", lineno + 1, cell))
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix file".into()));
    }
    let n = rows.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Parse(format!(
                "non-square data: {} rows but row {} has {} columns",
                n,
                i + 1,
                row.len()
            )));
        }
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    RealMatrix::from_rows(n, &flat)
}

pub fn parse_matrix_json(text: &str) -> Result<RealMatrix> {
    let raw: MatrixJson = serde_json::from_str(text)?;
    if raw.entries.len() != raw.n * raw.n {
        return Err(Error::Parse(format!(
            "non-square data: n = {} needs {} entries, got {}",
            raw.n,
            raw.n * raw.n,
            raw.entries.len()
        )));
    }
    RealMatrix::from_rows(raw.n, &raw.entries)
}

/// Reads a matrix file, dispatching on the `.json` extension and falling
/// back to CSV for everything else.
pub fn read_matrix_file(path: &Path) -> Result<RealMatrix> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        parse_matrix_json(&text)
    } else {
        parse_matrix_csv(&text)
    }
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> serde_json::Value {
    let n = m.nrows();
    let entries: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    serde_json::json!({ "n": n, "entries": entries })
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
