// Maximum-likelihood LTI fit on the standardized benchmark training data.
// Its `[A B; C 0]` block becomes the prior mean of the LPV model.
//
// cargo run --release --example lti_prior [restarts]

use lpv_uq::benchmark::{generate_benchmark_datasets, BenchmarkConfig};
use lpv_uq::data::bfr;
use lpv_uq::estimate::{fit_lti_prior, FitConfig, LtiFit};
use nalgebra::DMatrix;

pub fn run_example(restarts: usize, lbfgs_iterations: usize) -> lpv_uq::Result<LtiFit> {
    let data = generate_benchmark_datasets(&BenchmarkConfig::default())?;
    let (train, record) = data.train.normalize()?;
    let mut cfg = FitConfig::lti_default();
    cfg.restarts = restarts;
    cfg.lbfgs.max_iterations = lbfgs_iterations;
    let lti = fit_lti_prior(&train, 6, DMatrix::identity(2, 2), &cfg, None)?;
    for r in &lti.fit.restarts {
        println!("restart {}: cost {:.4} -> {:.4} ({:?})", r.index, r.initial_cost, r.final_cost, r.termination);
    }
    // BFR is reported in physical units; test data start from rest
    let test = data.test.apply_normalization(&record)?;
    let sim = lti.fit.model.simulate(&test.u, &[0.0; 6])?;
    let test_bfr = bfr(&data.test.y, &record.y.invert(&sim.y)?)?;
    println!("train BFR {:.2} %, test BFR {:.2} %", lti.train_bfr, test_bfr);
    let a = lti.m0().view((0, 0), (6, 6)).into_owned();
    let radius = a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    println!("spectral radius of A: {radius:.4}");
    Ok(lti)
}

#[allow(dead_code)]
fn main() -> lpv_uq::Result<()> {
    let restarts = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    run_example(restarts, 2000).map(|_| ())
}
