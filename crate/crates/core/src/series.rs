//! Row-major multichannel time series.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A sequence of equally sized sample vectors stored contiguously, one row per
/// time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::InvalidArgument(
                    "zero-dimensional series must be empty".into(),
                ));
            }
        } else if data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "series buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * len],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            check_dim("series row", dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_vectors(dim: usize, rows: &[DVector<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            check_dim("series row", dim, row.len())?;
            data.extend(row.iter().copied());
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        check_dim("series row", self.dim, row.len())?;
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Series {
        Series {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    /// Appends the rows of `other` after the rows of `self`.
    pub fn concat(&self, other: &Series) -> Result<Series> {
        check_dim("series concat", self.dim, other.dim)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Series {
            dim: self.dim,
            data,
        })
    }

    /// Per-channel mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-channel population variance.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let n = self.len().max(1) as f64;
        let mut var = vec![0.0; self.dim];
        for row in self.rows() {
            for c in 0..self.dim {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        var
    }

    pub fn map_rows(&self, mut f: impl FnMut(usize, &[f64], &mut [f64])) -> Series {
        let mut out = Series::zeros(self.dim, self.len());
        for k in 0..self.len() {
            let (src, dst) = (self.row(k), &mut out.data[k * self.dim..(k + 1) * self.dim]);
            f(k, src, dst);
        }
        out
    }
}
