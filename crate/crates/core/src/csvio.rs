//! CSV ingestion: point clouds for principal-axis fitting and generic
//! numeric tables for plotting.

use std::io::Read;

use crate::{Error, Result, Vector};

/// A numeric CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn values(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[col]).collect()
    }
}

/// Parses a headed CSV whose every field is a finite number. Errors name
/// the offending record (1-based, header = line 1) and column.
pub fn read_numeric_table<R: Read>(input: R) -> Result<NumericTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().any(String::is_empty) {
        return Err(Error::Config("CSV header has empty column names".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Config(format!(
                "line {}: expected {} fields, found {}",
                i + 2,
                headers.len(),
                record.len()
            )));
        }
        let row = record
            .iter()
            .zip(&headers)
            .map(|(field, name)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Config(format!("line {}, column `{name}`: `{field}` is not a finite number", i + 2))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(NumericTable { headers, rows })
}

/// Reads d-vectors, one per row, from a headed CSV (any column names).
pub fn read_samples<R: Read>(input: R) -> Result<Vec<Vector>> {
    let table = read_numeric_table(input)?;
    Ok(table.rows.into_iter().map(Vector::from_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_samples() {
        let s = read_samples("x_0,x_1\n1,2\n-3.5, 4e-1\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1][1], 0.4);
    }

    #[test]
    fn reports_bad_fields() {
        let err = read_samples("a,b\n1,nan\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`b`"), "{err}");
        assert!(read_samples("a,b\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn header_only_is_empty() {
        let t = read_numeric_table("t,mean\n".as_bytes()).unwrap();
        assert!(t.rows.is_empty());
    }
}
