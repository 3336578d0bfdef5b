//! Gaussian predictive distribution of simulated outputs.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::data::{fmt_f64, ChannelScaling};
use crate::error::{check_dim, Error, Result};
use crate::model::{LpvSsModel, SimOptions};
use crate::sensitivity::{simulate_columns, Columns};
use crate::series::Series;

use super::laplace::PosteriorApprox;

/// Per-step predictive moments `N(mean_k, Sigma_e + J_k Sigma_ap J_k')`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveTrajectory {
    pub mean: Series,
    /// Total covariance per step.
    pub total: Vec<DMatrix<f64>>,
    pub aleatoric: DMatrix<f64>,
    pub epistemic: Vec<DMatrix<f64>>,
    pub n_sigma: f64,
    pub lower: Series,
    pub upper: Series,
}

fn sym_clipped(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = (m + m.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return s;
    }
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&d) * q.transpose();
    out = (&out + out.transpose()) * 0.5;
    out
}

fn bounds(mean: &Series, total: &[DMatrix<f64>], n_sigma: f64) -> Result<(Series, Series)> {
    let lower = mean.map_rows(|k, m, dst| {
        for c in 0..m.len() {
            dst[c] = m[c] - n_sigma * total[k][(c, c)].max(0.0).sqrt();
        }
    });
    let upper = mean.map_rows(|k, m, dst| {
        for c in 0..m.len() {
            dst[c] = m[c] + n_sigma * total[k][(c, c)].max(0.0).sqrt();
        }
    });
    Ok((lower, upper))
}

fn check_n_sigma(n_sigma: f64) -> Result<()> {
    if n_sigma > 0.0 && n_sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("n_sigma must be positive, got {n_sigma}")))
    }
}

impl PredictiveTrajectory {
    /// Builds the trajectory from the mean, per-step output Jacobians over
    /// the parameters and the posterior covariance.
    pub fn from_jacobians(
        mean: Series,
        jacobians: &[DMatrix<f64>],
        sigma_ap: &DMatrix<f64>,
        sigma_e: &DMatrix<f64>,
        n_sigma: f64,
    ) -> Result<Self> {
        check_n_sigma(n_sigma)?;
        let n_y = mean.dim();
        check_dim("jacobian count", mean.len(), jacobians.len())?;
        check_dim("noise covariance size", n_y, sigma_e.nrows())?;
        check_dim("noise covariance size", n_y, sigma_e.ncols())?;
        let aleatoric = (sigma_e + sigma_e.transpose()) * 0.5;
        let mut epistemic = Vec::with_capacity(jacobians.len());
        let mut total = Vec::with_capacity(jacobians.len());
        for j in jacobians {
            check_dim("jacobian rows", n_y, j.nrows())?;
            check_dim("jacobian columns", sigma_ap.nrows(), j.ncols())?;
            let e = sym_clipped(&(j * sigma_ap * j.transpose()));
            total.push(&aleatoric + &e);
            epistemic.push(e);
        }
        let (lower, upper) = bounds(&mean, &total, n_sigma)?;
        Ok(Self {
            mean,
            total,
            aleatoric,
            epistemic,
            n_sigma,
            lower,
            upper,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn diag_sd(mats: &[DMatrix<f64>], n_y: usize) -> Series {
        let data = mats.iter().flat_map(|m| (0..n_y).map(move |c| m[(c, c)].max(0.0).sqrt())).collect();
        Series::new(n_y, data).expect("consistent length")
    }

    /// Total standard deviation per step and channel.
    pub fn sd(&self) -> Series {
        Self::diag_sd(&self.total, self.mean.dim())
    }

    pub fn epistemic_sd(&self) -> Series {
        Self::diag_sd(&self.epistemic, self.mean.dim())
    }

    pub fn aleatoric_sd(&self) -> Vec<f64> {
        (0..self.mean.dim()).map(|c| self.aleatoric[(c, c)].max(0.0).sqrt()).collect()
    }

    /// Same trajectory with a new bound multiplier.
    pub fn with_n_sigma(&self, n_sigma: f64) -> Result<Self> {
        check_n_sigma(n_sigma)?;
        let (lower, upper) = bounds(&self.mean, &self.total, n_sigma)?;
        Ok(Self {
            n_sigma,
            lower,
            upper,
            ..self.clone()
        })
    }

    /// Maps the trajectory from normalized to physical output units.
    pub fn denormalize(&self, y: &ChannelScaling) -> Result<Self> {
        let n_y = self.mean.dim();
        check_dim("scaling channels", n_y, y.scale.len())?;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&y.scale));
        let scale = |m: &DMatrix<f64>| &d * m * &d;
        let mean = y.invert(&self.mean)?;
        let total: Vec<_> = self.total.iter().map(scale).collect();
        let (lower, upper) = bounds(&mean, &total, self.n_sigma)?;
        Ok(Self {
            mean,
            aleatoric: scale(&self.aleatoric),
            epistemic: self.epistemic.iter().map(scale).collect(),
            total,
            n_sigma: self.n_sigma,
            lower,
            upper,
        })
    }

    /// CSV with columns `t`, then per channel `y_hat`, `sd`, `lo`, `hi`,
    /// `aleatoric_sd`, `epistemic_sd`.
    pub fn to_csv(&self, ts: f64) -> String {
        let n_y = self.mean.dim();
        let mut out = String::from("t");
        for name in ["y_hat", "sd", "lo", "hi", "aleatoric_sd", "epistemic_sd"] {
            for c in 1..=n_y {
                write!(out, ",{name}_{c}").unwrap();
            }
        }
        out.push('\n');
        let sd = self.sd();
        let epi = self.epistemic_sd();
        let alea = self.aleatoric_sd();
        for k in 0..self.len() {
            fmt_f64(&mut out, k as f64 * ts);
            for row in [self.mean.row(k), sd.row(k), self.lower.row(k), self.upper.row(k), &alea[..], epi.row(k)] {
                for v in row {
                    out.push(',');
                    fmt_f64(&mut out, *v);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Predictive trajectory for input `u_seq` from `x_hat_0`, with the mean
/// simulated at the posterior mode and the parameter uncertainty pushed
/// through the output Jacobians (initial-state columns excluded).
pub fn predictive_trajectory(
    model: &LpvSsModel,
    posterior: &PosteriorApprox,
    u_seq: &Series,
    x_hat_0: &[f64],
    sigma_e: &DMatrix<f64>,
    n_sigma: f64,
) -> Result<PredictiveTrajectory> {
    check_n_sigma(n_sigma)?;
    let n = model.n_theta();
    check_dim("posterior dimension", n, posterior.dim())?;
    let columns = Columns {
        theta: (0..n).collect(),
        x0: false,
    };
    let model = model.with_params(&posterior.mu_ap)?;
    let trace = simulate_columns(&model, u_seq, x_hat_0, columns, SimOptions::default())?;
    PredictiveTrajectory::from_jacobians(trace.y, &trace.jacobians, &posterior.sigma_ap, sigma_e, n_sigma)
}
