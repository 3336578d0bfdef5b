//! Uncertainty quantification: Laplace posterior over the parameters and the
//! Gaussian predictive distribution it induces on simulated outputs.

mod gaussian;
mod laplace;
mod predictive;

pub use gaussian::{chi2_cdf, chi2_inv_cdf, confidence_region_test, gamma_p, gaussian_marginal, ln_gamma, RegionTest};
pub use laplace::{gauss_newton_hessian, laplace_fit, woodbury_posterior_covariance, PosteriorApprox};
pub use predictive::{predictive_trajectory, PredictiveTrajectory};
