use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Gaussian parameter prior with diagonal covariance, plus the output noise
/// covariance used to weight residuals.
///
/// A variance of `f64::INFINITY` marks a flat-prior coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    mu_o: Vec<f64>,
    #[serde(with = "inf_vec")]
    sigma_o_diag: Vec<f64>,
    sigma_e: Vec<Vec<f64>>,
    #[serde(skip)]
    sigma_e_inv: Option<DMatrix<f64>>,
}

impl Prior {
    pub fn new(mu_o: Vec<f64>, sigma_o_diag: Vec<f64>, sigma_e: DMatrix<f64>) -> Result<Self> {
        check_dim("prior variance length", mu_o.len(), sigma_o_diag.len())?;
        if let Some(v) = mu_o.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior mean must be finite, got {v}")));
        }
        if let Some(v) = sigma_o_diag.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidArgument(format!("prior variances must be positive, got {v}")));
        }
        let inv = invert_spd(&sigma_e)?;
        Ok(Self {
            mu_o,
            sigma_o_diag,
            sigma_e: (0..sigma_e.nrows()).map(|r| sigma_e.row(r).iter().copied().collect()).collect(),
            sigma_e_inv: Some(inv),
        })
    }

    /// Flat prior over `n_theta` coordinates.
    pub fn flat(n_theta: usize, sigma_e: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![0.0; n_theta], vec![f64::INFINITY; n_theta], sigma_e)
    }

    pub fn len(&self) -> usize {
        self.mu_o.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_o.is_empty()
    }

    pub fn mu_o(&self) -> &[f64] {
        &self.mu_o
    }

    pub fn sigma_o_diag(&self) -> &[f64] {
        &self.sigma_o_diag
    }

    pub fn is_flat(&self) -> bool {
        self.sigma_o_diag.iter().all(|v| v.is_infinite())
    }

    pub fn sigma_e(&self) -> DMatrix<f64> {
        let n = self.sigma_e.len();
        DMatrix::from_fn(n, n, |r, c| self.sigma_e[r][c])
    }

    pub fn sigma_e_inv(&self) -> DMatrix<f64> {
        match &self.sigma_e_inv {
            Some(m) => m.clone(),
            None => invert_spd(&self.sigma_e()).expect("validated on construction"),
        }
    }

    pub fn n_y(&self) -> usize {
        self.sigma_e.len()
    }

    /// `0.5 * ||theta - mu_o||^2` weighted by the inverse prior variances.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((t, m), s) in theta.iter().zip(&self.mu_o).zip(&self.sigma_o_diag) {
            if s.is_finite() {
                acc += (t - m) * (t - m) / s;
            }
        }
        0.5 * acc
    }

    /// Adds the gradient of [`Prior::penalty`] to `grad`.
    pub fn add_gradient(&self, theta: &[f64], grad: &mut [f64]) {
        for (((g, t), m), s) in grad.iter_mut().zip(theta).zip(&self.mu_o).zip(&self.sigma_o_diag) {
            if s.is_finite() {
                *g += (t - m) / s;
            }
        }
    }

    /// Checks the deserialized fields and restores the cached inverse.
    pub fn validated(self) -> Result<Self> {
        let n = self.sigma_e.len();
        if self.sigma_e.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("sigma_e must be square".into()));
        }
        let s = self.sigma_e();
        Self::new(self.mu_o, self.sigma_o_diag, s)
    }
}

pub(crate) fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("expected a non-empty square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotPositiveDefinite("sigma_e is not symmetric"));
    }
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite("sigma_e"))?;
    Ok(chol.inverse())
}

/// JSON has no infinity literal; flat coordinates are written as `null`.
mod inf_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}
