// Chi-squared quantiles and joint confidence-region membership, next to
// the per-channel two-sigma rule.

use lpv_uq::uq::{chi2_inv_cdf, confidence_region_test};
use nalgebra::DMatrix;

pub fn run_example() -> lpv_uq::Result<()> {
    for n in [1, 2, 6] {
        println!("chi2 95% threshold, {n} dof: {:.5}", chi2_inv_cdf(0.95, n)?);
    }
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
    let y_hat = [0.0, 0.0];
    for y in [[1.5, 1.5], [1.5, -1.5], [0.5, 0.2]] {
        let r = confidence_region_test(&y, &y_hat, &sigma, 0.95)?;
        let per_channel = y.iter().all(|v| v.abs() <= 2.0);
        println!(
            "y = {y:?}: Mahalanobis^2 {:.3} vs {:.3} -> joint {}, per-channel 2 sigma {}",
            r.distance,
            r.threshold,
            if r.inside { "inside" } else { "outside" },
            if per_channel { "inside" } else { "outside" }
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> lpv_uq::Result<()> {
    run_example()
}
