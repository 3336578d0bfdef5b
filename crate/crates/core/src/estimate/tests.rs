use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fixtures::{random_model, random_series};
use crate::series::Series;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sigma_e_2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8])
}

/// Data from `model` plus an offset so residuals are non-trivial.
fn dataset(model: &LpvSsModel, len: usize, seed: u64, offset: f64) -> Dataset {
    let dims = model.dims();
    let u = random_series(dims.n_u, len, &mut rng(seed));
    let y = model.simulate(&u, &vec![0.0; dims.n_x]).unwrap().y;
    let noise = random_series(dims.n_y, len, &mut rng(seed + 1));
    let y = Series::new(dims.n_y, y.as_slice().iter().zip(noise.as_slice()).map(|(a, b)| a + offset * b).collect()).unwrap();
    Dataset::new(0.1, u, y).unwrap()
}

fn random_prior(n: usize, n_y: usize, seed: u64) -> Prior {
    let mu = random_series(1, n, &mut rng(seed)).as_slice().to_vec();
    let var: Vec<f64> = (0..n).map(|i| if i % 7 == 0 { f64::INFINITY } else { 0.5 + (i % 3) as f64 }).collect();
    let e = if n_y == 2 { sigma_e_2() } else { DMatrix::from_element(1, 1, 0.7) };
    Prior::new(mu, var, e).unwrap()
}

#[test]
fn perfect_fit_at_prior_mean_is_zero_and_stationary() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[4], true, &mut rng(1));
    let data = dataset(&m, 30, 2, 0.0);
    let prior = Prior::new(m.pack(), vec![1.0; m.n_theta()], sigma_e_2()).unwrap();
    let x0 = [0.0; 3];
    assert_eq!(neg_log_posterior(&m, &x0, &data, &prior).unwrap(), 0.0);
    let g = cost_gradient(&m, &x0, &data, &prior).unwrap();
    assert!(g.theta.iter().chain(&g.x0).all(|v| *v == 0.0));
}

#[test]
fn empty_data_leaves_prior_term() {
    let m = random_model(Dims::new(2, 1, 2, 1), &[2], true, &mut rng(3));
    let data = Dataset::new(1.0, Series::zeros(1, 0), Series::zeros(2, 0)).unwrap();
    let v: Vec<f64> = (0..m.n_theta()).map(|i| 0.1 * i as f64 - 1.0).collect();
    let mu: Vec<f64> = m.pack().iter().zip(&v).map(|(t, v)| t - v).collect();
    let prior = Prior::new(mu, vec![1.0; m.n_theta()], sigma_e_2()).unwrap();
    let cost = neg_log_posterior(&m, &[0.0; 2], &data, &prior).unwrap();
    let expect = 0.5 * v.iter().map(|x| x * x).sum::<f64>();
    assert!((cost - expect).abs() <= 1e-12 * expect);
    let g = cost_gradient(&m, &[0.0; 2], &data, &prior).unwrap();
    for (a, b) in g.theta.iter().zip(&v) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(g.x0, vec![0.0; 2]);
}

#[test]
fn cost_matches_double_sum_oracle() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[3], true, &mut rng(4));
    let data = dataset(&m, 10, 5, 0.3);
    let prior = random_prior(m.n_theta(), 2, 6);
    let truth = random_model(Dims::new(3, 2, 2, 2), &[3], true, &mut rng(7));
    let x0 = [0.2, -0.1, 0.05];
    let cost = neg_log_posterior(&truth, &x0, &data, &prior).unwrap();
    // direct evaluation, independent of the objective implementation
    let y_hat = truth.simulate(&data.u, &x0).unwrap().y;
    let w = sigma_e_2().try_inverse().unwrap();
    let mut oracle = 0.0;
    for k in 0..10 {
        for a in 0..2 {
            for b in 0..2 {
                let ea = data.y.row(k)[a] - y_hat.row(k)[a];
                let eb = data.y.row(k)[b] - y_hat.row(k)[b];
                oracle += 0.5 * ea * w[(a, b)] * eb;
            }
        }
    }
    for ((t, m), s) in truth.pack().iter().zip(prior.mu_o()).zip(prior.sigma_o_diag()) {
        if s.is_finite() {
            oracle += 0.5 * (t - m) * (t - m) / s;
        }
    }
    assert!((cost - oracle).abs() <= 1e-10 * oracle.abs());
}

fn fd_gradient(obj: &mut Objective, p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|q| {
            let h = 1e-6f64.max(1e-6 * p[q].abs());
            let (mut a, mut b) = (p.to_vec(), p.to_vec());
            a[q] += h;
            b[q] -= h;
            (obj.cost(&a).unwrap().cost - obj.cost(&b).unwrap().cost) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1e-4 * scale)).fold(0.0, f64::max)
}

#[test]
fn gradient_routes_agree_with_finite_differences() {
    for (seed, dims, hidden) in [(10, Dims::new(3, 2, 2, 2), vec![3, 3]), (11, Dims::new(2, 1, 1, 1), vec![4]), (12, Dims::new(3, 2, 2, 0), vec![])] {
        let m = random_model(dims, &hidden, seed % 2 == 0, &mut rng(seed));
        let data = dataset(&m, 25, seed + 50, 0.3);
        let prior = random_prior(m.n_theta(), dims.n_y, seed + 60);
        let other = random_model(dims, &hidden, seed % 2 == 0, &mut rng(seed + 70));
        let x0: Vec<f64> = (0..dims.n_x).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let p = joint(&other, &x0).unwrap();
        let mut obj = Objective::new(&other, &data, &prior).unwrap();
        let mut g_rev = vec![0.0; p.len()];
        let mut g_fwd = vec![0.0; p.len()];
        let c_rev = obj.cost_and_gradient(&p, &mut g_rev).unwrap();
        let c_fwd = obj.cost_and_gradient_forward(&p, &mut g_fwd).unwrap();
        assert!((c_rev.cost - c_fwd.cost).abs() <= 1e-12 * c_rev.cost);
        let fd = fd_gradient(&mut obj, &p);
        assert!(rel_err(&g_rev, &fd) < 1e-5, "reverse {dims:?}: {}", rel_err(&g_rev, &fd));
        assert!(rel_err(&g_fwd, &fd) < 1e-5, "forward {dims:?}: {}", rel_err(&g_fwd, &fd));
        assert!(rel_err(&g_rev, &g_fwd) < 1e-9);
    }
}

#[test]
fn divergence_returns_penalty_and_zero_gradient() {
    let a = DMatrix::from_element(1, 1, 3.0);
    let b = DMatrix::from_element(1, 1, 1.0);
    let m = LpvSsModel::lti(&a, &b, &b, None).unwrap();
    let u = Series::new(1, vec![1.0; 40]).unwrap();
    let data = Dataset::new(1.0, u.clone(), Series::zeros(1, 40)).unwrap();
    let prior = Prior::flat(m.n_theta(), DMatrix::identity(1, 1)).unwrap();
    let mut obj = Objective::new(&m, &data, &prior).unwrap();
    let p = joint(&m, &[0.0]).unwrap();
    let mut g = vec![1.0; p.len()];
    let e = obj.cost_and_gradient(&p, &mut g).unwrap();
    assert!(e.penalized);
    assert_eq!(e.cost, DEFAULT_PENALTY);
    assert!(g.iter().all(|v| *v == 0.0));
    let custom = Objective::new(&m, &data, &prior).unwrap().with_penalty(5.0).cost(&p).unwrap();
    assert_eq!(custom.cost, 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flat_prior_reduces_to_likelihood(seed in 0u64..500, scale in 0.1f64..3.0) {
        let m = random_model(Dims::new(2, 2, 2, 1), &[3], true, &mut rng(seed));
        let data = dataset(&m, 12, seed + 1, 0.2);
        let prior = Prior::flat(m.n_theta(), sigma_e_2()).unwrap();
        let theta: Vec<f64> = m.pack().iter().map(|v| v * scale).collect();
        let mut p = theta;
        p.extend_from_slice(&[0.1, -0.3]);
        let mut obj = Objective::new(&m, &data, &prior).unwrap();
        prop_assert_eq!(obj.cost(&p).unwrap(), obj.likelihood_cost(&p).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..500) {
        let m = random_model(Dims::new(2, 1, 1, 1), &[3], false, &mut rng(seed));
        let data = dataset(&m, 15, seed + 3, 0.5);
        let prior = random_prior(m.n_theta(), 1, seed + 4);
        let p = joint(&m, &[0.3, -0.2]).unwrap();
        let mut obj = Objective::new(&m, &data, &prior).unwrap();
        let mut g = vec![0.0; p.len()];
        let e = obj.cost_and_gradient(&p, &mut g).unwrap();
        prop_assume!(!e.penalized);
        let fd = fd_gradient(&mut obj, &p);
        prop_assert!(rel_err(&g, &fd) < 1e-5, "{}", rel_err(&g, &fd));
    }
}

fn lti_truth() -> LpvSsModel {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.2, 0.8]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    LpvSsModel::lti(&a, &b, &c, None).unwrap()
}

fn quick_config(restarts: usize) -> FitConfig {
    FitConfig {
        adam: AdamConfig {
            iterations: 300,
            learning_rate: 1e-2,
            ..Default::default()
        },
        lbfgs: LbfgsConfig {
            max_iterations: 400,
            ..Default::default()
        },
        restarts,
        seed: 9,
        ..FitConfig::lti_default()
    }
}

#[test]
fn lti_self_identification() {
    let truth = lti_truth();
    let u = random_series(1, 300, &mut rng(20));
    let y = truth.simulate(&u, &[0.0, 0.0]).unwrap().y;
    let data = Dataset::new(1.0, u, y).unwrap();
    let fit = fit_lti_prior(&data, 2, DMatrix::identity(1, 1), &quick_config(2), Some(1)).unwrap();
    assert!(fit.train_bfr >= 99.0, "BFR {}", fit.train_bfr);
    assert_eq!(fit.m0().shape(), (3, 3));
}

#[test]
fn fit_is_deterministic_and_pool_independent() {
    let truth = lti_truth();
    let u = random_series(1, 120, &mut rng(21));
    let y = truth.simulate(&u, &[0.0, 0.0]).unwrap().y;
    let data = Dataset::new(1.0, u, y).unwrap();
    let s = Structure::lti(2, 1, 1);
    let prior = Prior::flat(s.n_theta().unwrap(), DMatrix::identity(1, 1)).unwrap();
    let mut cfg = quick_config(1);
    cfg.adam.iterations = 50;
    cfg.lbfgs.max_iterations = 30;
    let a = multi_start_fit(&data, &s, &prior, &cfg, Some(1)).unwrap();
    let b = multi_start_fit(&data, &s, &prior, &cfg, Some(1)).unwrap();
    assert_eq!(a, b);
    cfg.restarts = 3;
    let serial = multi_start_fit(&data, &s, &prior, &cfg, Some(1)).unwrap();
    let parallel = multi_start_fit(&data, &s, &prior, &cfg, Some(3)).unwrap();
    assert_eq!(serial, parallel);
    for r in &serial.restarts {
        assert!(r.adam_cost <= r.initial_cost);
        assert!(r.final_cost <= r.adam_cost);
        assert!(serial.cost <= r.final_cost);
    }
}

#[test]
fn lpv_prior_mean_initialisation() {
    let s = Structure {
        dims: Dims::new(2, 1, 1, 2),
        hidden: vec![3],
        d_zero: true,
    };
    let m0 = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 1.0, 0.0, 0.4, 0.0, 1.0, 0.0, 0.0]);
    let prior = prior_from_lti(&s, &m0, 0.25, 10.0, DMatrix::identity(1, 1)).unwrap();
    let m = initial_model(&s, &prior, &InitSpec::default(), &mut rng(30)).unwrap();
    assert_eq!(m.matrix(0), m0);
    let blk = m.matrix(1);
    assert!(blk.amax() < 0.06 && blk.amax() > 0.0);
    let net_params = &m.pack()[m.layout().net_offset()..];
    assert!(net_params.iter().any(|v| *v != 0.0));
    let idx = m.layout().matrix_index(0, 0, 0).unwrap();
    assert_eq!(prior.sigma_o_diag()[idx], 0.25);
    assert_eq!(prior.sigma_o_diag()[m.layout().net_offset()], 10.0);
}

#[test]
fn all_diverged_lists_penalties() {
    let truth = lti_truth();
    let u = random_series(1, 200, &mut rng(22));
    let y = truth.simulate(&u, &[0.0, 0.0]).unwrap().y;
    let data = Dataset::new(1.0, u, y).unwrap();
    let mut cfg = quick_config(2);
    cfg.adam.iterations = 5;
    cfg.lbfgs.max_iterations = 5;
    cfg.init.m0 = M0Init::Random { a_diag: 10.0, std: 0.1 };
    match fit_lti_prior(&data, 2, DMatrix::identity(1, 1), &cfg, Some(1)) {
        Err(Error::AllRestartsDiverged { restarts, penalties }) => {
            assert_eq!(restarts, 2);
            assert_eq!(penalties, vec![DEFAULT_PENALTY; 2]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn config_validation() {
    let mut c = FitConfig::default();
    assert!(c.validate().is_ok());
    c.restarts = 0;
    assert!(c.validate().is_err());
    let mut c = FitConfig::default();
    c.adam.learning_rate = 0.0;
    assert!(c.validate().is_err());
    let text = serde_json::to_string(&FitConfig::default()).unwrap();
    let back: FitConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, FitConfig::default());
    assert_eq!(FitConfig::default().adam.iterations, 2000);
    assert_eq!(FitConfig::default().lbfgs.max_iterations, 6000);
    assert_eq!(FitConfig::default().restarts, 16);
}
