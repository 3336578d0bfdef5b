// Laplace posterior of a small LPV model identified from data of a known
// system, with the Woodbury recursion checked against the direct inverse
// of the Gauss-Newton information.

use lpv_uq::data::Dataset;
use lpv_uq::estimate::{multi_start_fit, FitConfig, M0Init, Prior, Structure};
use lpv_uq::fixtures::{random_model, random_series};
use lpv_uq::model::Dims;
use lpv_uq::sensitivity::simulate_with_sensitivities;
use lpv_uq::series::Series;
use lpv_uq::uq::{gauss_newton_hessian, laplace_fit};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example(samples: usize) -> lpv_uq::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = Dims::new(2, 1, 1, 1);
    let truth = random_model(dims, &[3], true, &mut rng);
    let u = random_series(1, samples, &mut rng);
    let w = truth.simulate(&u, &[0.0, 0.0])?.y;
    let noise = Normal::new(0.0, 0.05).expect("valid sd");
    let y = Series::new(1, w.as_slice().iter().map(|v| v + noise.sample(&mut rng)).collect())?;
    let data = Dataset::new(1.0, u, y)?;

    let structure = Structure {
        dims,
        hidden: vec![3],
        d_zero: true,
    };
    let n = structure.n_theta()?;
    let sigma_e = DMatrix::from_element(1, 1, 0.05 * 0.05);
    let prior = Prior::new(vec![0.0; n], vec![1.0; n], sigma_e.clone())?;
    let mut cfg = FitConfig::default();
    cfg.restarts = 2;
    cfg.adam.iterations = 500;
    cfg.adam.learning_rate = 1e-2;
    cfg.lbfgs.max_iterations = 500;
    cfg.init.m0 = M0Init::Random { a_diag: 0.5, std: 0.1 };
    let fit = multi_start_fit(&data, &structure, &prior, &cfg, None)?;
    let post = laplace_fit(&fit.model, &fit.x_hat_0, &data, &prior)?;

    let trace = simulate_with_sensitivities(&fit.model, &data.u, &fit.x_hat_0, false)?;
    let p = gauss_newton_hessian(&trace.jacobians, &sigma_e, prior.sigma_o_diag())?;
    let direct = p.cholesky().expect("information is SPD").inverse();
    let rel = (&post.sigma_ap - &direct).norm() / direct.norm();
    println!("{n} parameters, {samples} records, MAP cost {:.4}", fit.cost);
    println!("Woodbury vs direct inverse: relative Frobenius deviation {rel:.2e}");
    let shrink: f64 = (0..n).map(|i| post.sigma_ap[(i, i)]).sum::<f64>() / n as f64;
    println!("mean posterior variance {shrink:.3e} (prior variance 1)");
    Ok(rel)
}

#[allow(dead_code)]
fn main() -> lpv_uq::Result<()> {
    run_example(200).map(|_| ())
}
