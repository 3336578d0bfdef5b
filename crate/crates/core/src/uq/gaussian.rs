//! Gaussian marginalization, chi-squared quantiles and confidence regions.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Moments of `y = A x + b + c` for `x ~ N(mu, sigma_x)` and independent
/// `c ~ N(0, sigma_c)`.
pub fn gaussian_marginal(
    mu: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma_c: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    check_dim("mean length", n, mu.len())?;
    check_dim("sigma_x rows", n, sigma_x.nrows())?;
    check_dim("sigma_x columns", n, sigma_x.ncols())?;
    check_dim("offset length", m, b.len())?;
    check_dim("sigma_c rows", m, sigma_c.nrows())?;
    check_dim("sigma_c columns", m, sigma_c.ncols())?;
    let mean = a * mu + b;
    let cov = sigma_c + a * sigma_x * a.transpose();
    Ok((mean, cov))
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(s, x)`.
pub fn gamma_p(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_pre = s * x.ln() - x - ln_gamma(s);
    if x < s + 1.0 {
        // series
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut a = s;
        for _ in 0..1000 {
            a += 1.0;
            term *= x / a;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + log_pre).exp().min(1.0)
    } else {
        // continued fraction for Q (modified Lentz)
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (log_pre.exp() * h)).max(0.0)
    }
}

/// Chi-squared CDF with `n` degrees of freedom.
pub fn chi2_cdf(x: f64, n: u32) -> f64 {
    gamma_p(0.5 * n as f64, 0.5 * x)
}

/// Inverse chi-squared CDF by bisection.
pub fn chi2_inv_cdf(alpha: f64, n: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("chi-squared degrees of freedom must be positive".into()));
    }
    let mut hi = n as f64 + 10.0;
    while chi2_cdf(hi, n) < alpha {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, n) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Membership in the `alpha` confidence ellipsoid of `N(y_hat, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionTest {
    pub inside: bool,
    /// Squared Mahalanobis distance.
    pub distance: f64,
    pub threshold: f64,
}

pub fn confidence_region_test(y: &[f64], y_hat: &[f64], sigma: &DMatrix<f64>, alpha: f64) -> Result<RegionTest> {
    check_dim("prediction length", y.len(), y_hat.len())?;
    check_dim("covariance size", y.len(), sigma.nrows())?;
    check_dim("covariance size", y.len(), sigma.ncols())?;
    let chol = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite("predictive covariance"))?;
    let e = DVector::from_iterator(y.len(), y.iter().zip(y_hat).map(|(a, b)| a - b));
    let distance = e.dot(&chol.solve(&e));
    let threshold = chi2_inv_cdf(alpha, y.len() as u32)?;
    Ok(RegionTest {
        inside: distance <= threshold,
        distance,
        threshold,
    })
}
