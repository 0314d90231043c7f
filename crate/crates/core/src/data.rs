//! Tabular datasets: column-major inputs plus a target vector.

use crate::error::DataError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// What a column holds. Inferred from the header: `d2_*` is a second
/// derivative, `d_*` a first derivative, `u`/`f` a function value, and
/// everything else a plain variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableRole {
    Variable,
    FunctionValue,
    FirstDerivative,
    SecondDerivative,
}

impl VariableRole {
    pub fn infer(name: &str) -> Self {
        let lower = name.trim().to_ascii_lowercase();
        if lower.starts_with("d2_") {
            VariableRole::SecondDerivative
        } else if lower.starts_with("d_") {
            VariableRole::FirstDerivative
        } else if lower == "u" || lower == "f" {
            VariableRole::FunctionValue
        } else {
            VariableRole::Variable
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub roles: Vec<VariableRole>,
    /// One vector per input column.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, DataError> {
        if x.is_empty() {
            return Err(DataError::TooFewColumns);
        }
        if names.len() != x.len() {
            return Err(DataError::LengthMismatch(names.len(), x.len()));
        }
        for col in &x {
            if col.len() != y.len() {
                return Err(DataError::LengthMismatch(col.len(), y.len()));
            }
        }
        let roles = names.iter().map(|n| VariableRole::infer(n)).collect();
        Ok(Dataset { names, roles, x, y })
    }

    /// Columns named `x0, x1, ...`.
    pub fn from_columns(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, DataError> {
        let names = (0..x.len()).map(|i| format!("x{i}")).collect();
        Self::new(names, x, y)
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_vars(&self) -> usize {
        self.x.len()
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            roles: self.roles.clone(),
            x: self
                .x
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Reads a headed CSV whose last column is the target.
    pub fn read_csv(reader: impl Read) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(DataError::TooFewColumns);
        }
        let k = header.len() - 1;
        let mut x = vec![Vec::new(); k];
        let mut y = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (column, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|e| DataError::Value {
                    row: row + 1,
                    column,
                    message: format!("{field:?}: {e}"),
                })?;
                if column < k {
                    x[column].push(v);
                } else {
                    y.push(v);
                }
            }
        }
        Self::new(header[..k].to_vec(), x, y)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes a headed CSV with the target named `y` in the last column.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.names.clone();
        header.push("y".into());
        w.write_record(&header)?;
        for r in 0..self.rows() {
            let rec: Vec<String> = self
                .x
                .iter()
                .map(|c| c[r])
                .chain(std::iter::once(self.y[r]))
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let d = Dataset::new(
            vec!["t".into(), "d_u".into()],
            vec![vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-300]],
            vec![std::f64::consts::PI, 7.0],
        )
        .unwrap();
        assert_eq!(d.roles, vec![VariableRole::Variable, VariableRole::FirstDerivative]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
    }

    #[test]
    fn bad_cell_reports_location() {
        let text = "a,y\n1,2\n3,oops\n";
        match Dataset::read_csv(text.as_bytes()) {
            Err(DataError::Value { row: 2, column: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
