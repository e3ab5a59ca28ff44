//! Row-major `(time × space)` matrices and their CSV form.
//!
//! Every gridded trajectory in the crate (states, adjoints, controls, agent
//! densities) is a [`Field`]: one row per time node, one column per grid
//! cell. The CSV layout is `t,x_0,...,x_{n-1}` with one row per time node;
//! numbers are written in shortest round-trip form so that values re-read
//! from disk are bit-identical to the ones in memory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * cols);
        for row in rows {
            crate::error::check_len("field row length", cols, row.len())?;
            data.extend(row);
        }
        Ok(Self {
            rows: n_rows,
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_len("field data length", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &Field) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the field with a leading time column.
    pub fn write_csv(&self, path: &Path, times: &[f64], column_prefix: &str) -> Result<()> {
        crate::error::check_len("csv time column", self.rows, times.len())?;
        let mut out = String::with_capacity(self.rows * self.cols * 24);
        out.push('t');
        if self.cols == 1 && column_prefix.is_empty() {
            out.push_str(",u");
        } else {
            for j in 0..self.cols {
                let _ = write!(out, ",{column_prefix}{j}");
            }
        }
        out.push('\n');
        for (t, row) in times.iter().zip(self.iter_rows()) {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`Field::write_csv`], returning `(times, field)`.
    pub fn read_csv(path: &Path) -> Result<(Vec<f64>, Field)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let csv_err = |message: String| Error::Csv {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| csv_err("empty file".into()))?;
        let cols = header.split(',').count().saturating_sub(1);
        if cols == 0 {
            return Err(csv_err("header has no data columns".into()));
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                let s = s.ok_or_else(|| csv_err(format!("line {}: too few columns", lineno + 2)))?;
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| csv_err(format!("line {}: {e}", lineno + 2)))
            };
            times.push(parse(parts.next())?);
            for _ in 0..cols {
                data.push(parse(parts.next())?);
            }
            if parts.next().is_some() {
                return Err(csv_err(format!("line {}: too many columns", lineno + 2)));
            }
        }
        let rows = times.len();
        Ok((times, Field::from_vec(rows, cols, data)?))
    }
}
