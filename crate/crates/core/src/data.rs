//! Observation datasets: an N x d matrix with column names.
//!
//! CSV format: header row of column names, one sample per row, decimal
//! point, UTF-8.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    values: Mat,
}

impl Dataset {
    pub fn new(names: Vec<String>, values: Mat) -> Self {
        assert_eq!(names.len(), values.cols(), "one name per column");
        assert!(
            values.data().iter().all(|v| v.is_finite()),
            "dataset entries must be finite"
        );
        Dataset { names, values }
    }

    /// Dataset with generated names `x0, x1, ...`.
    pub fn unnamed(values: Mat) -> Self {
        let names = (0..values.cols()).map(|j| format!("x{j}")).collect();
        Dataset::new(names, values)
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n()).map(|r| self.values[(r, col)]).collect()
    }

    /// New dataset from the given row indices (repeats allowed).
    pub fn resample(&self, rows: &[usize]) -> Dataset {
        let mut m = Mat::zeros(rows.len(), self.d());
        for (out_r, &r) in rows.iter().enumerate() {
            for c in 0..self.d() {
                m[(out_r, c)] = self.values[(r, c)];
            }
        }
        Dataset::new(self.names.clone(), m)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(&self.names)?;
        for r in 0..self.n() {
            let row: Vec<String> =
                (0..self.d()).map(|c| format!("{}", self.values[(r, c)])).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let names: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
        let d = names.len();
        let mut data = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "row has {} fields, expected {d}",
                    record.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("non-numeric field {field:?}"))
                })?;
                data.push(v);
            }
        }
        if data.is_empty() {
            return Err(Error::EmptyInput("dataset has no rows".into()));
        }
        let n = data.len() / d;
        Ok(Dataset::new(names, Mat::from_vec(n, d, data)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let m = Mat::from_vec(3, 2, vec![1.0, 2.5, -0.125, 4.0, 5.0, 6.75]);
        let ds = Dataset::new(vec!["a".into(), "b".into()], m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn resample_repeats_rows() {
        let m = Mat::from_vec(3, 1, vec![10.0, 20.0, 30.0]);
        let ds = Dataset::unnamed(m);
        let r = ds.resample(&[2, 2, 0]);
        assert_eq!(r.column(0), vec![30.0, 30.0, 10.0]);
    }
}
