//! Laplace approximation of the parameter posterior.
//!
//! The negative log posterior is expanded to second order around the MAP
//! point. Dropping the second-derivative terms of the simulated outputs
//! leaves the Gauss-Newton information
//!
//! ```text
//! P = Sigma_o^-1 + sum_k J_k' Sigma_e^-1 J_k
//! ```
//!
//! whose inverse is accumulated one record at a time, starting from
//! `Sigma_o`, so no `n_theta x n_theta` matrix is ever factorized.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::estimate::{invert_spd, Prior};
use crate::model::{LpvSsModel, SimOptions};
use crate::sensitivity::{simulate_columns, Columns};

/// Gaussian posterior `N(mu_ap, sigma_ap)` over the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorApprox {
    pub mu_ap: Vec<f64>,
    pub sigma_ap: DMatrix<f64>,
    /// Number of records the information was accumulated over.
    pub n_data: usize,
    pub sigma_e: DMatrix<f64>,
    pub sigma_o_diag: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PosteriorDocument {
    mu_ap: Vec<f64>,
    sigma_ap: Vec<Vec<f64>>,
    n_data: usize,
    sigma_e: Vec<Vec<f64>>,
    sigma_o_diag: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn square_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * n);
    for r in rows {
        check_dim(what, n, r.len())?;
        flat.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

impl PosteriorApprox {
    pub fn dim(&self) -> usize {
        self.mu_ap.len()
    }

    /// Checks symmetry (1e-10 relative) and that no eigenvalue falls below
    /// `-1e-10` times the largest one.
    pub fn validate(&self) -> Result<()> {
        let n = self.mu_ap.len();
        check_dim("posterior covariance rows", n, self.sigma_ap.nrows())?;
        check_dim("posterior covariance columns", n, self.sigma_ap.ncols())?;
        check_dim("prior variance length", n, self.sigma_o_diag.len())?;
        if self.sigma_ap.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("posterior covariance has non-finite entries"));
        }
        let scale = self.sigma_ap.amax();
        if n == 0 || scale == 0.0 {
            return Ok(());
        }
        if (&self.sigma_ap - self.sigma_ap.transpose()).amax() > 1e-10 * scale {
            return Err(Error::NotPositiveDefinite("posterior covariance is not symmetric"));
        }
        let eig = self.sigma_ap.clone().symmetric_eigenvalues();
        let max = eig.max();
        if eig.min() < -1e-10 * max.abs() {
            return Err(Error::NotPositiveDefinite("posterior covariance has negative eigenvalues"));
        }
        invert_spd(&self.sigma_e)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PosteriorDocument {
            mu_ap: self.mu_ap.clone(),
            sigma_ap: rows_of(&self.sigma_ap),
            n_data: self.n_data,
            sigma_e: rows_of(&self.sigma_e),
            sigma_o_diag: self.sigma_o_diag.clone(),
        };
        Ok(serde_json::to_string(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PosteriorDocument = serde_json::from_str(text)?;
        let p = Self {
            sigma_ap: square_from_rows(&doc.sigma_ap, "posterior covariance row")?,
            sigma_e: square_from_rows(&doc.sigma_e, "noise covariance row")?,
            mu_ap: doc.mu_ap,
            n_data: doc.n_data,
            sigma_o_diag: doc.sigma_o_diag,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_jacobians(j_seq: &[DMatrix<f64>], n_y: usize, n: usize) -> Result<()> {
    for j in j_seq {
        check_dim("jacobian rows", n_y, j.nrows())?;
        check_dim("jacobian columns", n, j.ncols())?;
    }
    Ok(())
}

/// Gauss-Newton information matrix, accumulated directly. Flat prior
/// coordinates (infinite variance) contribute nothing from the prior.
pub fn gauss_newton_hessian(j_seq: &[DMatrix<f64>], sigma_e: &DMatrix<f64>, sigma_o_diag: &[f64]) -> Result<DMatrix<f64>> {
    let n = sigma_o_diag.len();
    let w = invert_spd(sigma_e)?;
    check_jacobians(j_seq, w.nrows(), n)?;
    let mut p = DMatrix::from_diagonal(&DVector::from_iterator(n, sigma_o_diag.iter().map(|v| 1.0 / v)));
    for j in j_seq {
        p += j.transpose() * &w * j;
    }
    symmetrize(&mut p);
    Ok(p)
}

/// Inverse of [`gauss_newton_hessian`] by rank-`n_y` Woodbury updates:
///
/// ```text
/// C <- C - C J' (Sigma_e + J C J')^-1 J C,    C_0 = Sigma_o
/// ```
pub fn woodbury_posterior_covariance(j_seq: &[DMatrix<f64>], sigma_e: &DMatrix<f64>, sigma_o_diag: &[f64]) -> Result<DMatrix<f64>> {
    let n = sigma_o_diag.len();
    invert_spd(sigma_e)?;
    check_jacobians(j_seq, sigma_e.nrows(), n)?;
    if let Some(v) = sigma_o_diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "covariance recursion needs a finite positive prior variance on every coordinate, got {v}"
        )));
    }
    let mut cov = DMatrix::from_diagonal(&DVector::from_column_slice(sigma_o_diag));
    for (step, j) in j_seq.iter().enumerate() {
        let k = &cov * j.transpose();
        let s = sigma_e + j * &k;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularUpdate { step });
        }
        let chol = s.cholesky().ok_or(Error::SingularUpdate { step })?;
        // C -= (K L^-T)(K L^-T)', symmetric by construction
        let mut w = k.transpose();
        if !chol.l_dirty().solve_lower_triangular_mut(&mut w) {
            return Err(Error::SingularUpdate { step });
        }
        // w now holds L^-1 K'
        cov.gemm_tr(-1.0, &w, &w, 1.0);
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularUpdate { step });
        }
    }
    symmetrize(&mut cov);
    Ok(cov)
}

/// Laplace posterior at the MAP point `model` (with initial state `x_hat_0`
/// held fixed) on `data`, using the noise covariance of `prior`.
pub fn laplace_fit(model: &LpvSsModel, x_hat_0: &[f64], data: &Dataset, prior: &Prior) -> Result<PosteriorApprox> {
    let n = model.n_theta();
    check_dim("prior length", n, prior.len())?;
    check_dim("dataset output channels", model.dims().n_y, data.n_y())?;
    check_dim("noise covariance size", data.n_y(), prior.n_y())?;
    let columns = Columns {
        theta: (0..n).collect(),
        x0: false,
    };
    let trace = simulate_columns(model, &data.u, x_hat_0, columns, SimOptions::default())?;
    let sigma_e = prior.sigma_e();
    let sigma_ap = woodbury_posterior_covariance(&trace.jacobians, &sigma_e, prior.sigma_o_diag())?;
    Ok(PosteriorApprox {
        mu_ap: model.pack(),
        sigma_ap,
        n_data: data.len(),
        sigma_e,
        sigma_o_diag: prior.sigma_o_diag().to_vec(),
    })
}
