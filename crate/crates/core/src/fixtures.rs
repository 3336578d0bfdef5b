//! Random model and signal generators for tests, examples and benchmarks.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Activation, Dims, LpvSsModel, SchedulingNet};
use crate::series::Series;

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn scale_to_frobenius(m: &mut DMatrix<f64>, target: f64) {
    let n = m.norm();
    if n > 0.0 {
        *m *= target / n;
    }
}

/// Random LPV model whose frozen dynamics stay contractive for moderate
/// scheduling values: `||A_0||_F = 0.5`, `||A_i||_F = 0.1`.
pub fn random_model<R: Rng + ?Sized>(dims: Dims, hidden: &[usize], d_zero: bool, rng: &mut R) -> LpvSsModel {
    let Dims { n_x, n_u, n_y, n_p } = dims;
    let mut blocks = Vec::with_capacity(n_p + 1);
    for i in 0..=n_p {
        let mut m = normal_matrix(n_x + n_y, n_x + n_u, rng) * if i == 0 { 0.5 } else { 0.1 };
        let mut a = m.view((0, 0), (n_x, n_x)).into_owned();
        scale_to_frobenius(&mut a, if i == 0 { 0.5 } else { 0.1 });
        m.view_mut((0, 0), (n_x, n_x)).copy_from(&a);
        blocks.push(m);
    }
    let net = if n_p == 0 {
        SchedulingNet::null(n_x + n_u)
    } else {
        let mut net = SchedulingNet::xavier(n_x + n_u, hidden, n_p, Activation::Tanh, rng);
        let mut p = Vec::new();
        net.pack_into(&mut p);
        // non-zero biases so that bias sensitivities are exercised
        for v in &mut p {
            if *v == 0.0 {
                *v = 0.2 * rng.random_range(-1.0..1.0);
            }
        }
        net.unpack_from(&p).expect("same parameter count");
        net
    };
    LpvSsModel::new(dims, d_zero, &blocks, net).expect("consistent dimensions")
}

/// I.i.d. standard normal samples.
pub fn random_series<R: Rng + ?Sized>(dim: usize, len: usize, rng: &mut R) -> Series {
    let data = (0..dim * len).map(|_| StandardNormal.sample(rng)).collect();
    Series::new(dim, data).expect("consistent length")
}
