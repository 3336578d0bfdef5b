//! Datasets, normalization, fit metrics and file formats.

mod csv;

pub use self::csv::{dataset_to_csv, parse_csv, read_dataset, sidecar_path, write_dataset, DatasetMeta};
pub(crate) use self::csv::fmt_f64;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::series::Series;

/// Per-channel affine standardization `v_n = (v - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelScaling {
    /// Z-scoring statistics of `s` (population standard deviation).
    pub fn fit(s: &Series) -> Result<Self> {
        let mean = s.mean();
        let var = s.variance();
        let mut scale = Vec::with_capacity(var.len());
        for (channel, v) in var.iter().enumerate() {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(Error::ZeroVariance { channel });
            }
            scale.push(v.sqrt());
        }
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply(&self, s: &Series) -> Result<Series> {
        check_dim("scaling channels", self.mean.len(), s.dim())?;
        Ok(s.map_rows(|_, src, dst| {
            for c in 0..src.len() {
                dst[c] = (src[c] - self.mean[c]) / self.scale[c];
            }
        }))
    }

    pub fn invert(&self, s: &Series) -> Result<Series> {
        check_dim("scaling channels", self.mean.len(), s.dim())?;
        Ok(s.map_rows(|_, src, dst| {
            for c in 0..src.len() {
                dst[c] = src[c] * self.scale[c] + self.mean[c];
            }
        }))
    }
}

/// Statistics used to normalize a dataset, kept for reuse on other datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub u: ChannelScaling,
    pub y: ChannelScaling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ts: f64,
    pub u: Series,
    pub y: Series,
    /// Noise-free output, when known.
    pub w: Option<Series>,
    /// Set when the values are normalized by this record.
    pub normalization: Option<NormalizationRecord>,
}

impl Dataset {
    pub fn new(ts: f64, u: Series, y: Series) -> Result<Self> {
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::InvalidArgument(format!("sampling time must be positive, got {ts}")));
        }
        check_dim("dataset length (y vs u)", u.len(), y.len())?;
        Ok(Self {
            ts,
            u,
            y,
            w: None,
            normalization: None,
        })
    }

    pub fn with_truth(mut self, w: Series) -> Result<Self> {
        check_dim("truth length", self.y.len(), w.len())?;
        check_dim("truth channels", self.y.dim(), w.dim())?;
        self.w = Some(w);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.u.dim()
    }

    pub fn n_y(&self) -> usize {
        self.y.dim()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.ts).collect()
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            ts: self.ts,
            u: self.u.slice(start, end),
            y: self.y.slice(start, end),
            w: self.w.as_ref().map(|w| w.slice(start, end)),
            normalization: self.normalization.clone(),
        }
    }

    /// Standardizes with this dataset's own statistics.
    pub fn normalize(&self) -> Result<(Dataset, NormalizationRecord)> {
        let record = NormalizationRecord {
            u: ChannelScaling::fit(&self.u)?,
            y: ChannelScaling::fit(&self.y)?,
        };
        let d = self.apply_normalization(&record)?;
        Ok((d, record))
    }

    /// Standardizes with externally supplied statistics (e.g. train stats on
    /// test data).
    pub fn apply_normalization(&self, record: &NormalizationRecord) -> Result<Dataset> {
        if self.normalization.is_some() {
            return Err(Error::InvalidArgument("dataset is already normalized".into()));
        }
        Ok(Dataset {
            ts: self.ts,
            u: record.u.apply(&self.u)?,
            y: record.y.apply(&self.y)?,
            w: self.w.as_ref().map(|w| record.y.apply(w)).transpose()?,
            normalization: Some(record.clone()),
        })
    }

    /// Back to physical units; a no-op for datasets that are not normalized.
    pub fn denormalize(&self) -> Result<Dataset> {
        let Some(record) = &self.normalization else {
            return Ok(self.clone());
        };
        Ok(Dataset {
            ts: self.ts,
            u: record.u.invert(&self.u)?,
            y: record.y.invert(&self.y)?,
            w: self.w.as_ref().map(|w| record.y.invert(w)).transpose()?,
            normalization: None,
        })
    }
}

/// Best fit rate in percent:
/// `100 (1 - sqrt(sum ||y - y_hat||^2 / sum ||y - mean(y)||^2))`.
pub fn bfr(y_true: &Series, y_pred: &Series) -> Result<f64> {
    check_dim("bfr channels", y_true.dim(), y_pred.dim())?;
    check_dim("bfr length", y_true.len(), y_pred.len())?;
    if y_true.len() < 2 {
        return Err(Error::InvalidArgument("bfr needs at least two samples".into()));
    }
    let mean = y_true.mean();
    let (mut num, mut den) = (0.0, 0.0);
    for (yt, yp) in y_true.rows().zip(y_pred.rows()) {
        for c in 0..yt.len() {
            let e = yt[c] - yp[c];
            let d = yt[c] - mean[c];
            num += e * e;
            den += d * d;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroVariance { channel: 0 });
    }
    Ok((1.0 - (num / den).sqrt()) * 100.0)
}
