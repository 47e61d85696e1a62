use std::path::Path;

use hcv_core::{Error, Result};
use nalgebra::DMatrix;

/// A CSV file with a header row and numeric fields only.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub values: DMatrix<f64>,
}

impl NumericTable {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.is_empty() {
            return Err(Error::Format("csv has no header row".into()));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(rows as u64 + 2);
            for (col, field) in record.iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| {
                    Error::Format(format!(
                        "line {line}, column {} ({}): cannot parse {field:?} as a number",
                        col + 1,
                        headers[col]
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::Format(format!(
                        "line {line}, column {} ({}): non-finite value {field:?}",
                        col + 1,
                        headers[col]
                    )));
                }
                data.push(value);
            }
            rows += 1;
        }
        Ok(Self {
            values: DMatrix::from_row_slice(rows, headers.len(), &data),
            headers,
        })
    }

    /// Resolves a column list: comma-separated header names, 0-based
    /// indices, or `prefix*` patterns.
    pub fn resolve(&self, spec: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if let Some(prefix) = part.strip_suffix('*') {
                let hits: Vec<usize> = (0..self.headers.len())
                    .filter(|&i| self.headers[i].starts_with(prefix))
                    .collect();
                if hits.is_empty() {
                    return Err(Error::Config(format!("no column matches {part:?}")));
                }
                out.extend(hits);
            } else if let Some(i) = self.headers.iter().position(|h| h == part) {
                out.push(i);
            } else if let Ok(i) = part.parse::<usize>() {
                if i >= self.headers.len() {
                    return Err(Error::Config(format!(
                        "column index {i} out of range (file has {} columns)",
                        self.headers.len()
                    )));
                }
                out.push(i);
            } else {
                return Err(Error::Config(format!("unknown column {part:?}")));
            }
        }
        if out.is_empty() {
            return Err(Error::Config(format!("empty column selection {spec:?}")));
        }
        Ok(out)
    }

    pub fn select(&self, spec: &str) -> Result<DMatrix<f64>> {
        let cols = self.resolve(spec)?;
        Ok(self.values.select_columns(&cols))
    }

    /// A single column read as integer labels.
    pub fn labels(&self, spec: &str) -> Result<Vec<i64>> {
        let cols = self.resolve(spec)?;
        if cols.len() != 1 {
            return Err(Error::Config(format!("label selection {spec:?} must name one column")));
        }
        self.values
            .column(cols[0])
            .iter()
            .enumerate()
            .map(|(row, &v)| {
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    Ok(v as i64)
                } else {
                    Err(Error::Format(format!(
                        "line {}, column {}: label {v} is not an integer",
                        row + 2,
                        cols[0] + 1
                    )))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_selects() {
        let t = NumericTable::parse(b"a,b,x_0,x_1\n1,2,3,4\n5,6,7,8\n").unwrap();
        assert_eq!(t.values.nrows(), 2);
        assert_eq!(t.resolve("x_*").unwrap(), vec![2, 3]);
        assert_eq!(t.resolve("b,0").unwrap(), vec![1, 0]);
        assert_eq!(t.select("a").unwrap(), DMatrix::from_column_slice(2, 1, &[1.0, 5.0]));
        assert!(t.resolve("zz").is_err());
        assert!(t.resolve("9").is_err());
    }

    #[test]
    fn reports_line_and_column() {
        let err = NumericTable::parse(b"a,b\n1,2\n3,oops\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("column 2"), "{err}");
    }

    #[test]
    fn labels_must_be_integers() {
        let t = NumericTable::parse(b"z,l\n0.5,1\n0.7,2.5\n").unwrap();
        assert!(t.labels("l").is_err());
        assert!(t.labels("z").is_err());
    }
}
