//! Shared serialisation helpers for matrices and CSV output.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense matrix in row-major JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    /// `[rows, cols]`.
    pub shape: [usize; 2],
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl DenseArray {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self {
            shape: [m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let [rows, cols] = self.shape;
        if rows * cols != self.data.len() {
            return Err(Error::Format(format!(
                "array of shape {rows}×{cols} holds {} values",
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("array holds non-finite values".into()));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &self.data))
    }
}

/// CSV writer with a header row, LF line endings and minimal quoting.
pub fn csv_writer<W: Write>(inner: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(inner)
}

/// Formats `value` with 12 significant digits.
pub fn fmt_sig12(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    format!("{value:.11e}")
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
