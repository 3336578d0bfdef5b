// Output Jacobians of a random LPV model from the forward sensitivity
// recursion, checked against central finite differences.

use lpv_uq::fixtures::{random_model, random_series};
use lpv_uq::model::Dims;
use lpv_uq::sensitivity::simulate_with_sensitivities;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example(horizon: usize) -> lpv_uq::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = random_model(Dims::new(3, 2, 2, 2), &[4, 4], false, &mut rng);
    let u = random_series(2, horizon, &mut rng);
    let x0 = [0.1, -0.2, 0.05];
    let trace = simulate_with_sensitivities(&model, &u, &x0, true)?;
    let theta = model.pack();
    let n = model.n_theta();
    let h = 1e-6;
    let mut worst = 0.0f64;
    // a handful of columns is enough to see the agreement
    for col in (0..n).step_by(n / 7 + 1) {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[col] += h;
        minus[col] -= h;
        let yp = model.with_params(&plus)?.simulate(&u, &x0)?.y;
        let ym = model.with_params(&minus)?.simulate(&u, &x0)?.y;
        for k in 0..horizon {
            for r in 0..2 {
                let fd = (yp.row(k)[r] - ym.row(k)[r]) / (2.0 * h);
                let an = trace.jacobians[k][(r, col)];
                worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
            }
        }
    }
    println!("{n} parameters + 3 initial-state columns, horizon {horizon}");
    println!("largest relative deviation from finite differences: {worst:.2e}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> lpv_uq::Result<()> {
    run_example(100).map(|_| ())
}
