// LPV model with a learned scheduling map: LTI prior first, then MAP
// estimation of all 163 parameters and the initial state.
//
// cargo run --release --example fit_lpv [restarts]

use lpv_uq::benchmark::{generate_benchmark_datasets, BenchmarkConfig};
use lpv_uq::data::bfr;
use lpv_uq::estimate::{fit_lti_prior, multi_start_fit, prior_from_lti, FitConfig, FitResult, Structure};
use lpv_uq::model::Dims;
use nalgebra::DMatrix;

pub fn run_example(restarts: usize, adam_iterations: usize, lbfgs_iterations: usize) -> lpv_uq::Result<FitResult> {
    let data = generate_benchmark_datasets(&BenchmarkConfig::default())?;
    let (train, record) = data.train.normalize()?;

    let mut lti_cfg = FitConfig::lti_default();
    lti_cfg.restarts = 1;
    lti_cfg.adam.iterations = adam_iterations;
    lti_cfg.lbfgs.max_iterations = lbfgs_iterations;
    let lti = fit_lti_prior(&train, 6, DMatrix::identity(2, 2), &lti_cfg, None)?;

    let structure = Structure {
        dims: Dims::new(6, 2, 2, 1),
        hidden: vec![3, 3],
        d_zero: true,
    };
    let prior = prior_from_lti(&structure, &lti.m0(), 0.25, 10.0, DMatrix::identity(2, 2) * 100.0)?;
    let mut cfg = FitConfig::default();
    cfg.restarts = restarts;
    cfg.adam.iterations = adam_iterations;
    cfg.lbfgs.max_iterations = lbfgs_iterations;
    let start = std::time::Instant::now();
    let fit = multi_start_fit(&train, &structure, &prior, &cfg, None)?;
    println!("{} parameters, {} restarts in {:.1?}", fit.model.n_theta(), restarts, start.elapsed());
    println!("best restart {} with cost {:.5}", fit.best_restart, fit.cost);

    let sim = fit.model.simulate(&train.u, &fit.x_hat_0)?;
    let train_bfr = bfr(&data.train.y, &record.y.invert(&sim.y)?)?;
    let test = data.test.apply_normalization(&record)?;
    let sim = fit.model.simulate(&test.u, &[0.0; 6])?;
    let test_bfr = bfr(&data.test.y, &record.y.invert(&sim.y)?)?;
    println!("LTI train BFR {:.2} %; LPV train BFR {train_bfr:.2} %, test BFR {test_bfr:.2} %", lti.train_bfr);
    Ok(fit)
}

#[allow(dead_code)]
fn main() -> lpv_uq::Result<()> {
    let restarts = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    run_example(restarts, 2000, 6000).map(|_| ())
}
