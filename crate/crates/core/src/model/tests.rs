use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::fixtures::{random_model, random_series};
use crate::series::Series;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn zero_scheduling_returns_m0_blocks() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[3], false, &mut rng(1));
    let s = m.assemble_matrices(&[0.0, 0.0]).unwrap();
    let m0 = m.matrix(0);
    assert_eq!(s.a, m0.view((0, 0), (3, 3)).into_owned());
    assert_eq!(s.b, m0.view((0, 3), (3, 2)).into_owned());
    assert_eq!(s.c, m0.view((3, 0), (2, 3)).into_owned());
    assert_eq!(s.d, m0.view((3, 3), (2, 2)).into_owned());
}

#[test]
fn scaling_case() {
    let base = random_model(Dims::new(2, 1, 1, 1), &[2], false, &mut rng(2));
    let m1 = base.matrix(1);
    let m = LpvSsModel::new(base.dims(), false, &[DMatrix::zeros(3, 3), m1.clone()], base.net().clone()).unwrap();
    let s = m.assemble_matrices(&[2.0]).unwrap();
    assert_eq!(s.a, m1.view((0, 0), (2, 2)) * 2.0);
    assert_eq!(s.d, m1.view((2, 2), (1, 1)) * 2.0);
}

#[test]
fn affine_sum_matches_elementwise_oracle() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[3], false, &mut rng(3));
    let rho = [0.3, -1.1];
    let s = m.assemble_matrices(&rho).unwrap();
    let (m0, m1, m2) = (m.matrix(0), m.matrix(1), m.matrix(2));
    for r in 0..5 {
        for c in 0..5 {
            let oracle = m0[(r, c)] + rho[0] * m1[(r, c)] + rho[1] * m2[(r, c)];
            let got = match (r < 3, c < 3) {
                (true, true) => s.a[(r, c)],
                (true, false) => s.b[(r, c - 3)],
                (false, true) => s.c[(r - 3, c)],
                (false, false) => s.d[(r - 3, c - 3)],
            };
            assert!((got - oracle).abs() < 1e-12);
        }
    }
}

#[test]
fn assemble_dimension_error_names_dimension() {
    let m = random_model(Dims::new(2, 1, 1, 1), &[2], true, &mut rng(4));
    match m.assemble_matrices(&[1.0, 2.0]) {
        Err(Error::Dimension { what, expected, got }) => {
            assert_eq!(what, "scheduling vector");
            assert_eq!((expected, got), (1, 2));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn d_zero_blocks_read_as_zero() {
    let dims = Dims::new(2, 2, 2, 1);
    let full = vec![DMatrix::from_element(4, 4, 1.0); 2];
    let m = LpvSsModel::new(dims, true, &full, SchedulingNet::zeros(4, &[], 1, Activation::Tanh)).unwrap();
    assert_eq!(m.assemble_matrices(&[3.0]).unwrap().d, DMatrix::zeros(2, 2));
    assert_eq!(m.layout().matrix_len(), 2 * (16 - 4));
    assert!(m.matrix(1).view((2, 2), (2, 2)).iter().all(|v| *v == 0.0));
}

#[test]
fn default_structure_parameter_count() {
    // n_x=6, n_u=2, n_y=2, n_p=1, D fixed to zero, 8-3-3-1 tanh net
    let net = SchedulingNet::zeros(8, &[3, 3], 1, Activation::Tanh);
    let m = LpvSsModel::zeros(Dims::new(6, 2, 2, 1), true, net).unwrap();
    assert_eq!(m.layout().matrix_len(), 2 * (36 + 12 + 12));
    assert_eq!(m.layout().net_len(), 27 + 12 + 4);
    assert_eq!(m.n_theta(), 163);
}

#[test]
fn packing_order_is_row_wise_over_stacked_blocks() {
    let dims = Dims::new(1, 1, 1, 1);
    let m0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 0.0]);
    let m1 = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 0.0]);
    let w = DMatrix::from_row_slice(1, 2, &[9.0, 10.0]);
    let net = SchedulingNet::new(2, Activation::Tanh, vec![Layer::new(&w, &[11.0]).unwrap()]).unwrap();
    let m = LpvSsModel::new(dims, true, &[m0, m1], net).unwrap();
    assert_eq!(m.pack(), vec![1.0, 2.0, 5.0, 6.0, 3.0, 7.0, 9.0, 10.0, 11.0]);
}

#[test]
fn step_zero_state_zero_input() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[3, 3], true, &mut rng(5));
    let (x, y, _) = m.step(&[0.0; 3], &[0.0; 2]).unwrap();
    assert!(x.iter().all(|v| *v == 0.0));
    assert!(y.iter().all(|v| *v == 0.0));
}

#[test]
fn step_lti_reduction() {
    let m = random_model(Dims::new(3, 2, 2, 0), &[], false, &mut rng(6));
    let s = m.assemble_matrices(&[]).unwrap();
    let x = nalgebra::DVector::from_vec(vec![0.2, -1.0, 0.4]);
    let u = nalgebra::DVector::from_vec(vec![1.5, -0.3]);
    let (xn, y, rho) = m.step(x.as_slice(), u.as_slice()).unwrap();
    assert!(rho.is_empty());
    assert!((xn - (&s.a * &x + &s.b * &u)).amax() < 1e-14);
    assert!((y - (&s.c * &x + &s.d * &u)).amax() < 1e-14);
}

#[test]
fn step_hand_computed() {
    // 2 states, 1 input, 1 output, one scheduling variable
    let m0 = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 1.0, 0.0, 0.8, 0.0, 1.0, 0.0, 0.0]);
    let m1 = DMatrix::from_row_slice(3, 3, &[0.1, 0.0, 0.0, 0.0, -0.2, 0.5, 0.0, 2.0, 0.0]);
    // rho = 0.5 x1 - u + 0.25 (single linear layer)
    let w = DMatrix::from_row_slice(1, 3, &[0.5, 0.0, -1.0]);
    let net = SchedulingNet::new(3, Activation::Tanh, vec![Layer::new(&w, &[0.25]).unwrap()]).unwrap();
    let m = LpvSsModel::new(Dims::new(2, 1, 1, 1), true, &[m0, m1], net).unwrap();
    let (x, u) = ([1.0, 2.0], [0.5]);
    let rho = 0.5 * 1.0 - 0.5 + 0.25;
    let hand_x = [
        (0.5 + 0.1 * rho) * 1.0 + 0.1 * 2.0 + 1.0 * 0.5,
        (0.8 - 0.2 * rho) * 2.0 + 0.5 * rho * 0.5,
    ];
    let hand_y = 1.0 * 1.0 + 2.0 * rho * 2.0;
    let (xn, y, r) = m.step(&x, &u).unwrap();
    assert!((r[0] - rho).abs() < 1e-12);
    assert!((xn[0] - hand_x[0]).abs() < 1e-12);
    assert!((xn[1] - hand_x[1]).abs() < 1e-12);
    assert!((y[0] - hand_y).abs() < 1e-12);
}

#[test]
fn simulate_zero_input_zero_output() {
    let m = random_model(Dims::new(4, 2, 2, 1), &[3, 3], true, &mut rng(7));
    let t = m.simulate(&Series::zeros(2, 30), &[0.0; 4]).unwrap();
    assert!(t.y.as_slice().iter().all(|v| *v == 0.0));
    assert_eq!(t.x.len(), 31);
    assert_eq!(t.rho.len(), 30);
}

#[test]
fn impulse_response_matches_matrix_powers() {
    let m = random_model(Dims::new(3, 1, 2, 0), &[], false, &mut rng(8));
    let s = m.assemble_matrices(&[]).unwrap();
    let mut u = Series::zeros(1, 20);
    u.row_mut(0)[0] = 1.0;
    let t = m.simulate(&u, &[0.0; 3]).unwrap();
    assert!((nalgebra::DVector::from_row_slice(t.y.row(0)) - s.d.column(0)).amax() < 1e-14);
    let mut apow = DMatrix::identity(3, 3);
    for k in 1..20 {
        let markov = &s.c * &apow * &s.b;
        for c in 0..2 {
            assert!((t.y.row(k)[c] - markov[(c, 0)]).abs() < 1e-12);
        }
        apow = &s.a * apow;
    }
}

#[test]
fn lti_simulation_matches_closed_form_over_200_steps() {
    let m = random_model(Dims::new(4, 2, 2, 0), &[], false, &mut rng(9));
    let s = m.assemble_matrices(&[]).unwrap();
    let u = random_series(2, 200, &mut rng(10));
    let x0 = [0.3, -0.2, 1.0, 0.5];
    let t = m.simulate(&u, &x0).unwrap();
    let mut x = nalgebra::DVector::from_row_slice(&x0);
    let mut max_rel = 0.0f64;
    for k in 0..200 {
        let uk = nalgebra::DVector::from_row_slice(u.row(k));
        let y = &s.c * &x + &s.d * &uk;
        for c in 0..2 {
            max_rel = max_rel.max((t.y.row(k)[c] - y[c]).abs() / y.amax().max(1e-12));
        }
        x = &s.a * &x + &s.b * &uk;
    }
    assert!(max_rel < 1e-10, "{max_rel}");
}

#[test]
fn simulate_is_deterministic() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[3, 3], true, &mut rng(11));
    let u = random_series(2, 50, &mut rng(12));
    let a = m.simulate(&u, &[0.1, 0.2, 0.3]).unwrap();
    let b = m.simulate(&u, &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_reports_time_index() {
    let a = DMatrix::from_element(1, 1, 10.0);
    let b = DMatrix::from_element(1, 1, 1.0);
    let c = DMatrix::from_element(1, 1, 1.0);
    let m = LpvSsModel::lti(&a, &b, &c, None).unwrap();
    match m.simulate(&Series::zeros(1, 50), &[1.0]) {
        Err(Error::Divergence { step, .. }) => assert_eq!(step, 9),
        other => panic!("unexpected {other:?}"),
    }
    assert!(m.simulate(&Series::zeros(1, 0), &[1.0]).is_err());
}

#[test]
fn model_json_round_trip_is_exact() {
    let m = random_model(Dims::new(3, 2, 2, 2), &[3, 3], true, &mut rng(13));
    let mut f = ModelFile::new(m);
    f.x_hat_0 = Some(vec![0.1, 1.0 / 3.0, -2e-300]);
    f.ts = Some(0.05);
    let back = ModelFile::from_json(&f.to_json().unwrap()).unwrap();
    assert_eq!(back, f);
    assert_eq!(back.model.pack(), f.model.pack());
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(seed in 0u64..1000, n_p in 0usize..3, d_zero: bool) {
        let mut r = rng(seed);
        let mut m = random_model(Dims::new(3, 2, 2, n_p), &[3, 2], d_zero, &mut r);
        let theta: Vec<f64> = random_series(1, m.n_theta(), &mut r).as_slice().to_vec();
        m.set_params(&theta).unwrap();
        prop_assert_eq!(m.pack(), theta);
        let again = m.with_params(&m.pack()).unwrap();
        prop_assert_eq!(again.matrices(), m.matrices());
    }

    #[test]
    fn matrices_are_affine_in_rho(seed in 0u64..1000, alpha in -2.0f64..2.0) {
        let mut r = rng(seed);
        let m = random_model(Dims::new(3, 1, 2, 2), &[3], false, &mut r);
        let r1 = [0.4, -1.3];
        let r2 = [-0.7, 2.1];
        let mix = [alpha * r1[0] + (1.0 - alpha) * r2[0], alpha * r1[1] + (1.0 - alpha) * r2[1]];
        let (a, b, c) = (
            m.assemble_matrices(&r1).unwrap(),
            m.assemble_matrices(&r2).unwrap(),
            m.assemble_matrices(&mix).unwrap(),
        );
        let lhs = c.a.clone();
        let rhs = &a.a * alpha + &b.a * (1.0 - alpha);
        prop_assert!((lhs - rhs).amax() < 1e-12);
        prop_assert!((c.c - (&a.c * alpha + &b.c * (1.0 - alpha))).amax() < 1e-12);
    }
}
