//! CSV matrix files and JSON helpers.
//!
//! Files are UTF-8, comma separated, no header unless asked. Values are
//! written with 17 significant digits so every `f64` round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How samples are laid out in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// One sample per row (the default).
    #[default]
    SamplesAsRows,
    /// One sample per column.
    SamplesAsColumns,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" | "samples-as-rows" => Ok(Layout::SamplesAsRows),
            "cols" | "columns" | "samples-as-columns" => Ok(Layout::SamplesAsColumns),
            other => Err(Error::InvalidInput(format!("unknown layout '{other}'"))),
        }
    }
}

/// A matrix as stored in a file plus the orientation it was declared with.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    /// Exactly the file's rows and columns.
    pub storage: DMatrix<f64>,
    pub layout: Layout,
}

impl SampleMatrix {
    pub fn samples(&self) -> usize {
        match self.layout {
            Layout::SamplesAsRows => self.storage.nrows(),
            Layout::SamplesAsColumns => self.storage.ncols(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.layout {
            Layout::SamplesAsRows => self.storage.ncols(),
            Layout::SamplesAsColumns => self.storage.nrows(),
        }
    }

    /// `dim x samples`, the orientation used throughout the library.
    pub fn into_columns(self) -> DMatrix<f64> {
        match self.layout {
            Layout::SamplesAsRows => self.storage.transpose(),
            Layout::SamplesAsColumns => self.storage,
        }
    }
}

/// Parse CSV text into a matrix with the text's row/column structure.
pub fn parse_csv_matrix(text: &str, header: bool) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let offset = if header { 2 } else { 1 };
    for (idx, record) in reader.records().enumerate() {
        let row = idx + offset;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: col + 1,
                    message: format!("non-finite value '{cell}'"),
                });
            }
            values.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::Parse {
                    row,
                    column: values.len().min(first.len()) + 1,
                    message: format!(
                        "ragged row: expected {} columns, found {}",
                        first.len(),
                        values.len()
                    ),
                });
            }
        }
        rows.push(values);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::EmptyInput("no numeric rows".into()));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

pub fn load_matrix(path: impl AsRef<Path>, layout: Layout, header: bool) -> Result<SampleMatrix> {
    let text = fs::read_to_string(path.as_ref())?;
    let storage = parse_csv_matrix(&text, header)?;
    Ok(SampleMatrix { storage, layout })
}

/// Format a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_f64(m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Write `m` exactly as given, one matrix row per line.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(matrix_to_csv(m).as_bytes())?;
    Ok(())
}

/// Write a `dim x samples` matrix in the requested sample layout.
pub fn write_samples(path: impl AsRef<Path>, columns: &DMatrix<f64>, layout: Layout) -> Result<()> {
    match layout {
        Layout::SamplesAsRows => write_matrix(path, &columns.transpose()),
        Layout::SamplesAsColumns => write_matrix(path, columns),
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path.as_ref(), text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

/// Row-major nested arrays.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged nested array".into()));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

/// `#[serde(with = "crate::io::serde_matrix")]` for `DMatrix<f64>` fields.
pub mod serde_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
